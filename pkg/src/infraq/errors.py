"""Exception hierarchy and warning capture.

Errors fall into three families that map onto CLI exit codes: configuration
problems (1), data problems (2) and an unusable model (3).
"""

from __future__ import annotations

import contextlib
import contextvars
import warnings


class InfraqError(Exception):
    exit_code = 2


class ConfigError(InfraqError, ValueError):
    exit_code = 1


class DataError(InfraqError, ValueError):
    exit_code = 2


class ModelQualityError(InfraqError):
    exit_code = 3


# ingest
class MissingColumn(DataError):
    def __init__(self, column: str):
        super().__init__(f"missing column: {column!r}")
        self.column = column


class NonNumericCell(DataError):
    def __init__(self, row: int, column: str, value: str):
        super().__init__(f"row {row}, column {column!r}: non-numeric value {value!r}")
        self.row, self.column, self.value = row, column, value


class DuplicateGeoid(DataError):
    pass


class OutOfRange(DataError):
    pass


class RaggedRow(DataError):
    pass


class EmptyInput(DataError):
    pass


# labeling / resample / gbdt
class DegenerateData(DataError):
    pass


class TooFewMinority(DataError):
    pass


class SingleClass(DataError):
    pass


class SingleClassTraining(SingleClass):
    pass


class NaNFeature(DataError):
    pass


class LengthMismatch(DataError):
    pass


class TooFewPerClass(DataError):
    pass


class TooFewRows(DataError):
    pass


class InvalidParameter(ConfigError):
    pass


# shap
class MissingCover(DataError):
    pass


class TooManyFeatures(DataError):
    pass


class NoCorrectInstances(ModelQualityError):
    pass


class EmptyMatrix(DataError):
    pass


class UnknownFeature(DataError, KeyError):
    pass


# thresholds / provision / inequality
class TooFewPoints(DataError):
    pass


class NonFiniteInput(DataError):
    pass


class MissingThreshold(DataError, KeyError):
    pass


class MissingWeight(DataError, KeyError):
    pass


class MeanOutOfRange(DataError):
    pass


class TooFewValues(DataError):
    pass


class EmptyGroup(DataError):
    pass


class ZeroWorseMedian(DataError):
    pass


# cli
class MissingUpstreamArtifact(InfraqError):
    exit_code = 1


class DataWarning(UserWarning):
    """Degenerate-but-recoverable input (constant column, tied median, ...)."""


_collector: contextvars.ContextVar[list[str] | None] = contextvars.ContextVar(
    "infraq_warnings", default=None
)


def warn(message: str) -> None:
    """Emit a DataWarning and record it in the active collector, if any."""
    sink = _collector.get()
    if sink is not None:
        sink.append(message)
    warnings.warn(message, DataWarning, stacklevel=2)


@contextlib.contextmanager
def collect_warnings():
    """Record every :func:`warn` message raised in the current context.

    Uses a context variable rather than ``warnings.catch_warnings`` so that
    concurrent city runs on separate threads keep separate lists.
    """
    sink: list[str] = []
    token = _collector.set(sink)
    try:
        yield sink
    finally:
        _collector.reset(token)
