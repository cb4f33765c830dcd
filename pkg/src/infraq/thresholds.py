"""LOWESS smoothing of dependence data and optimal-quantity thresholds.

A feature's threshold is where its smoothed attribution curve turns from
negative (lowers hazard) to positive (raises hazard). Without such a
crossing, more of the feature is treated as better and the threshold is the
observed maximum; a curve that is never negative instead gets the minimum.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingThreshold, TooFewPoints, warn

DEFAULT_FRAC = 0.6
DEFAULT_ROBUST_ITERS = 1
MIN_POINTS = 10


class Pattern(str, enum.Enum):
    CROSSES_UPWARD = "CrossesUpward"
    DECREASING = "Decreasing"
    ALWAYS_NEGATIVE = "AlwaysNegative"
    ALWAYS_POSITIVE = "AlwaysPositive"
    MIXED = "Mixed"


@dataclass
class FittedCurve:
    x: np.ndarray
    y: np.ndarray
    band_lo: np.ndarray | None = None
    band_hi: np.ndarray | None = None

    def at(self, x) -> np.ndarray:
        return np.interp(x, self.x, self.y)


@dataclass
class ThresholdEntry:
    feature: str
    pattern: Pattern
    threshold: float
    crossings: list[float] = field(default_factory=list)
    note: str = ""


@dataclass
class ThresholdProfile:
    entries: dict[str, ThresholdEntry]

    def __getitem__(self, feature: str) -> ThresholdEntry:
        return self.entries[feature]

    def __contains__(self, feature: str) -> bool:
        return feature in self.entries

    def thresholds(self, features) -> np.ndarray:
        missing = [f for f in features if f not in self.entries]
        if missing:
            raise MissingThreshold(", ".join(missing))
        return np.array([self.entries[f].threshold for f in features], dtype=np.float64)


# --------------------------------------------------------------------------
# LOWESS


def _local_linear(x, y, robustness, grid, r):
    """Tricube-weighted local line at every grid point.

    The bandwidth at a grid point is the distance to its r-th nearest
    observation; observations at exactly that distance get zero weight.
    """
    dist = np.abs(grid[:, None] - x[None, :])
    h = np.partition(dist, r - 1, axis=1)[:, r - 1]
    zero_h = h == 0
    safe_h = np.where(zero_h, 1.0, h)[:, None]
    u = np.minimum(dist / safe_h, 1.0)
    tricube = (1.0 - u**3) ** 3
    # every window point sits on the grid point: fall back to their mean
    tricube[zero_h] = (dist[zero_h] == 0).astype(np.float64)
    w = tricube * robustness[None, :]
    sw = w.sum(axis=1)
    lost = sw <= 0
    if lost.any():
        w[lost] = tricube[lost]
        sw[lost] = w[lost].sum(axis=1)
    xm = (w @ x) / sw
    ym = (w @ y) / sw
    dx = x[None, :] - xm[:, None]
    sxx = (w * dx * dx).sum(axis=1)
    sxy = (w * dx * (y[None, :] - ym[:, None])).sum(axis=1)
    flat = zero_h | (sxx <= 1e-12 * sw * h * h)
    slope = np.where(flat, 0.0, sxy / np.where(flat, 1.0, sxx))
    return ym + slope * (grid - xm)


def lowess_fit(
    x,
    y,
    frac: float = DEFAULT_FRAC,
    robust_iters: int = DEFAULT_ROBUST_ITERS,
    grid=None,
) -> FittedCurve:
    """Locally weighted linear regression with bisquare robustness passes.

    Each local fit uses the ceil(frac * n) nearest observations. The curve is
    evaluated on ``grid``, by default the sorted distinct x values.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(x)
    if n < MIN_POINTS:
        raise TooFewPoints(f"LOWESS needs at least {MIN_POINTS} points, got {n}")
    if not 0 < frac <= 1:
        raise ValueError("frac must lie in (0, 1]")
    r = max(1, min(n, math.ceil(frac * n)))
    grid = np.unique(x) if grid is None else np.asarray(grid, dtype=np.float64)

    robustness = np.ones(n)
    for _ in range(robust_iters):
        resid = y - _local_linear(x, y, robustness, x, r)
        s = np.median(np.abs(resid))
        if s <= 1e-12 * max(1.0, np.abs(y).max()):
            break
        u = np.clip(resid / (6.0 * s), -1.0, 1.0)
        robustness = (1.0 - u**2) ** 2
    return FittedCurve(x=grid, y=_local_linear(x, y, robustness, grid, r))


def bootstrap_band(
    x,
    y,
    frac: float = DEFAULT_FRAC,
    B: int = 200,
    level: float = 0.95,
    seed=0,
    robust_iters: int = DEFAULT_ROBUST_ITERS,
    grid=None,
    return_refits: bool = False,
):
    """Pointwise percentile band from B bootstrap refits, on the fit grid."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    grid = np.unique(x) if grid is None else np.asarray(grid, dtype=np.float64)
    rng = np.random.default_rng(seed)
    refits = np.empty((B, len(grid)))
    for b in range(B):
        idx = rng.integers(len(x), size=len(x))
        refits[b] = lowess_fit(x[idx], y[idx], frac, robust_iters, grid=grid).y
    tail = 100 * (1 - level) / 2
    lo, hi = np.percentile(refits, [tail, 100 - tail], axis=0)
    return (lo, hi, refits) if return_refits else (lo, hi)


# --------------------------------------------------------------------------
# crossings and patterns


def find_upward_crossings(curve: FittedCurve) -> list[float]:
    """x positions where the curve goes from < 0 to >= 0, linearly interpolated."""
    xs, ys = curve.x, curve.y
    out = []
    for k in range(len(ys) - 1):
        if ys[k] < 0 <= ys[k + 1]:
            x0, x1, y0, y1 = xs[k], xs[k + 1], ys[k], ys[k + 1]
            out.append(float(x0 + (0.0 - y0) * (x1 - x0) / (y1 - y0)))
    return out


def classify_and_threshold(
    curve: FittedCurve,
    feature_range: tuple[float, float] | None = None,
    feature: str = "",
) -> ThresholdEntry:
    """Assign a pattern and threshold to one feature's fitted curve.

    Rules, first match wins:

    * one upward crossing and the curve ends >= 0: CrossesUpward at the crossing
    * several upward crossings, or one crossing followed by a fall back below
      zero: Mixed, threshold at the first crossing
    * no crossing, last value < first value and last value < 0: Decreasing, max
    * no crossing, curve <= 0 everywhere: AlwaysNegative, max
    * no crossing, curve >= 0 everywhere: AlwaysPositive, min
    """
    lo, hi = feature_range if feature_range is not None else (curve.x.min(), curve.x.max())
    lo, hi = float(lo), float(hi)
    ys = curve.y
    crossings = find_upward_crossings(curve)

    if len(crossings) == 1 and ys[-1] >= 0:
        return ThresholdEntry(feature, Pattern.CROSSES_UPWARD, crossings[0], crossings)
    if crossings:
        why = ("several upward crossings" if len(crossings) > 1
               else "curve falls back below zero after crossing")
        warn(f"{feature or 'feature'}: {why}; using the first crossing as threshold")
        return ThresholdEntry(feature, Pattern.MIXED, crossings[0], crossings,
                              note=f"{why}; first crossing used")
    if ys[-1] < ys[0] and ys[-1] < 0:
        return ThresholdEntry(feature, Pattern.DECREASING, hi, crossings,
                              note="no crossing; maximum used")
    if np.all(ys <= 0):
        return ThresholdEntry(feature, Pattern.ALWAYS_NEGATIVE, hi, crossings,
                              note="no crossing; maximum used")
    return ThresholdEntry(feature, Pattern.ALWAYS_POSITIVE, lo, crossings,
                          note="never negative; minimum used (extension rule)")
