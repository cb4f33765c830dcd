"""Spatial inequality index and income/provision disparity statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyGroup, MeanOutOfRange, OutOfRange, TooFewValues, ZeroWorseMedian, warn


@dataclass
class MedianSplit:
    """Indices below the median (``lower``) and at or above it (``upper``)."""

    lower: np.ndarray
    upper: np.ndarray
    median: float
    n_dropped: int = 0


@dataclass
class GroupIncome:
    better_median: float
    worse_median: float
    gap: float


@dataclass
class Ecdf:
    x: np.ndarray  # distinct sorted values
    F: np.ndarray  # P(X <= x)

    def __call__(self, t) -> np.ndarray:
        idx = np.searchsorted(self.x, t, side="right")
        return np.where(idx > 0, self.F[np.maximum(idx - 1, 0)], 0.0)


def inequality_index(values) -> float:
    """Standard deviation over sqrt(mu * (1 - mu)); population std."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        raise TooFewValues("inequality index needs at least 2 values")
    mu = values.mean()
    if not 0 < mu < 1:
        raise MeanOutOfRange(f"mean {mu!r} outside (0, 1)")
    return float(values.std() / np.sqrt(mu * (1.0 - mu)))


def _median_split(values: np.ndarray, dropped: int = 0) -> MedianSplit:
    if len(values) < 2:
        raise TooFewValues("a median split needs at least 2 values")
    med = float(np.median(values))
    lower = np.flatnonzero(values < med)
    upper = np.flatnonzero(values >= med)
    if len(lower) == 0:
        warn("all values tie at the median; lower group is empty")
    return MedianSplit(lower=lower, upper=upper, median=med, n_dropped=dropped)


def split_by_provision_median(scores) -> MedianSplit:
    """``upper`` is the better-provisioned half, ``lower`` the worse one."""
    return _median_split(np.asarray(scores, dtype=np.float64))


def split_by_income_median(incomes) -> MedianSplit:
    """Split on median income; NaN/None incomes are excluded and counted.

    Returned indices refer to positions in the original input.
    """
    incomes = np.array([np.nan if v is None else v for v in incomes], dtype=np.float64)
    present = np.flatnonzero(~np.isnan(incomes))
    split = _median_split(incomes[present], dropped=len(incomes) - len(present))
    split.lower = present[split.lower]
    split.upper = present[split.upper]
    return split


def group_income_gap(scores, incomes) -> GroupIncome:
    """Relative median-income gap of better vs worse provisioned tracts."""
    incomes = np.array([np.nan if v is None else v for v in incomes], dtype=np.float64)
    split = split_by_provision_median(scores)
    better = incomes[split.upper]
    worse = incomes[split.lower]
    better, worse = better[~np.isnan(better)], worse[~np.isnan(worse)]
    if len(better) == 0 or len(worse) == 0:
        raise EmptyGroup("both provision groups need tracts with known income")
    b, w = float(np.median(better)), float(np.median(worse))
    if w == 0:
        raise ZeroWorseMedian("worse-provisioned median income is zero")
    return GroupIncome(better_median=b, worse_median=w, gap=(b - w) / w)


def ecdf(values) -> Ecdf:
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        raise EmptyGroup("ECDF of an empty sample")
    xs, counts = np.unique(values, return_counts=True)
    return Ecdf(x=xs, F=np.cumsum(counts) / len(values))


def ecdf_area_gap(low, high) -> float:
    """Exact area between two ECDFs over [0, 1]."""
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    if len(low) == 0 or len(high) == 0:
        raise EmptyGroup("both groups must be non-empty")
    for v in (low, high):
        if v.min() < 0 or v.max() > 1:
            raise OutOfRange("scores must lie in [0, 1]")
    fa, fb = ecdf(low), ecdf(high)
    knots = np.unique(np.concatenate([[0.0, 1.0], low, high]))
    widths = np.diff(knots)
    heights = np.abs(fa(knots[:-1]) - fb(knots[:-1]))
    return float((widths * heights).sum())


def quintile_bins(values) -> np.ndarray:
    """Levels 1-5 from the 20/40/60/80th percentiles (linear interpolation).

    A value equal to a cut point is placed in the level above it.
    """
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 5:
        raise TooFewValues("quintiles need at least 5 values")
    if np.all(values == values[0]):
        warn("all values equal; every tract placed in level 1")
        return np.ones(len(values), dtype=np.int64)
    cuts = np.percentile(values, [20, 40, 60, 80])
    return (1 + np.searchsorted(cuts, values, side="right")).astype(np.int64)
