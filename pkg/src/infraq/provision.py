"""Quality- and quantity-based provision scores per tract.

Both scores are ``1 - minmax(sum_f w_f * |x_f - t_f|)`` over a city's tracts.
Quality uses softmax-normalised attribution weights and dependence-curve
thresholds; quantity uses equal weights and the per-city feature maxima.
Deviations are measured on min-max scaled features unless ``raw_units``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyInput, MissingThreshold, MissingWeight, NonFiniteInput, warn


@dataclass
class WeightVector:
    raw: np.ndarray
    normalized: np.ndarray
    feature_names: tuple[str, ...] = ()


@dataclass
class ScaleParams:
    mins: np.ndarray
    maxs: np.ndarray

    def apply(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        span = self.maxs - self.mins
        safe = np.where(span > 0, span, 1.0)
        out = (values - self.mins) / safe
        return np.where(span > 0, out, 0.0)


@dataclass
class ProvisionScores:
    geoids: tuple[str, ...]
    scores: np.ndarray
    deviations: np.ndarray
    kind: str = "quality"


def softmax_weights(raw, feature_names: Sequence[str] = ()) -> WeightVector:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0 or not np.all(np.isfinite(raw)):
        raise NonFiniteInput("weights must be finite and non-empty")
    e = np.exp(raw - raw.max())
    return WeightVector(raw=raw, normalized=e / e.sum(), feature_names=tuple(feature_names))


def feature_scale(matrix) -> tuple[np.ndarray, ScaleParams]:
    """Min-max scale each column to [0, 1]; constant columns become zeros."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    if matrix.shape[0] == 0:
        raise EmptyInput("nothing to scale")
    params = ScaleParams(mins=matrix.min(axis=0), maxs=matrix.max(axis=0))
    for j in np.flatnonzero(params.maxs == params.mins):
        warn(f"feature column {j} is constant; scaled to zeros")
    return params.apply(matrix), params


def _flip_minmax(deviations: np.ndarray) -> np.ndarray:
    lo, hi = deviations.min(), deviations.max()
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        warn("all tracts have the same deviation; every score set to 1")
        return np.ones_like(deviations)
    return 1.0 - (deviations - lo) / (hi - lo)


def _vector(obj, names: Sequence[str], n: int, error) -> np.ndarray:
    if hasattr(obj, "thresholds"):
        return obj.thresholds(names)
    if isinstance(obj, WeightVector):
        obj = obj.normalized
    if isinstance(obj, dict):
        missing = [f for f in names if f not in obj]
        if missing:
            raise error(", ".join(missing))
        obj = [obj[f] for f in names]
    vec = np.asarray(obj, dtype=np.float64)
    if vec.shape != (n,):
        raise error(f"expected {n} values, got shape {vec.shape}")
    return vec


def _unpack(X):
    if hasattr(X, "values") and hasattr(X, "geoids"):
        return np.asarray(X.values, dtype=np.float64), tuple(X.geoids), tuple(X.feature_names)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return X, tuple(str(i) for i in range(len(X))), tuple(f"f{j}" for j in range(X.shape[1]))


def quality_provision(X, thresholds, weights, raw_units: bool = False) -> ProvisionScores:
    """Score tracts by weighted distance to each feature's threshold.

    ``X`` is a FeatureMatrix or an (n, F) array in raw feature units;
    ``thresholds`` a ThresholdProfile, mapping or length-F vector in raw units;
    ``weights`` a WeightVector (its normalised weights are used), mapping or
    vector of already-normalised weights.
    """
    values, geoids, names = _unpack(X)
    if len(values) == 0:
        raise EmptyInput("no tracts")
    t = _vector(thresholds, names, values.shape[1], MissingThreshold)
    w = _vector(weights, names, values.shape[1], MissingWeight)
    if raw_units:
        scaled, t_scaled = values, t
    else:
        scaled, params = feature_scale(values)
        t_scaled = params.apply(t[None, :])[0]
    dev = (np.abs(scaled - t_scaled) * w).sum(axis=1)
    return ProvisionScores(geoids=geoids, scores=_flip_minmax(dev), deviations=dev, kind="quality")


def quantity_provision(X, raw_units: bool = False) -> ProvisionScores:
    """Equal weights, thresholds at the per-city maximum of every feature."""
    values, geoids, names = _unpack(X)
    if len(values) == 0:
        raise EmptyInput("no tracts")
    n_feat = values.shape[1]
    result = quality_provision(
        X, thresholds=values.max(axis=0), weights=np.full(n_feat, 1.0 / n_feat), raw_units=raw_units
    )
    result.kind = "quantity"
    return result
