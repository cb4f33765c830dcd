"""SMOTE oversampling of the minority hazard class."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter, SingleClass, TooFewMinority

DEFAULT_K = 5


@dataclass
class BalancedSet:
    X: np.ndarray
    y: np.ndarray
    synthetic: np.ndarray  # bool flag per row

    @property
    def counts(self) -> dict[int, int]:
        return {int(c): int((self.y == c).sum()) for c in np.unique(self.y)}


def smote_synthesize(minority: np.ndarray, k: int, n_new: int, seed) -> np.ndarray:
    """Draw ``n_new`` points on segments between minority rows and their neighbours.

    Each synthetic row is ``x_i + u * (x_nn - x_i)`` with ``x_i`` drawn uniformly
    from the minority rows, ``x_nn`` one of its ``k`` nearest minority rows
    (Euclidean, self excluded, ties by row order) and ``u ~ U[0, 1]``.
    ``k`` is clipped to ``len(minority) - 1``.
    """
    minority = np.asarray(minority, dtype=np.float64)
    if minority.ndim == 1:
        minority = minority[:, None]
    m = len(minority)
    if m < 2:
        raise TooFewMinority(f"SMOTE needs at least 2 minority rows, got {m}")
    if k < 1:
        raise InvalidParameter("k must be >= 1")
    k = min(k, m - 1)
    n_dim = minority.shape[1]
    if n_new <= 0:
        return np.empty((0, n_dim))

    d2 = ((minority[:, None, :] - minority[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    neighbours = np.argsort(d2, axis=1, kind="stable")[:, :k]

    rng = np.random.default_rng(seed)
    base = rng.integers(m, size=n_new)
    pick = neighbours[base, rng.integers(k, size=n_new)]
    gap = rng.random(n_new)[:, None]
    return minority[base] + gap * (minority[pick] - minority[base])


def balance_training(
    X: np.ndarray,
    y: np.ndarray,
    seed,
    k: int = DEFAULT_K,
    undersample: bool = False,
) -> BalancedSet:
    """Bring both classes of a training split to the same size.

    By default the minority class is SMOTE-oversampled up to the majority
    count and every original row is kept in place, with synthetic rows
    appended. ``undersample=True`` instead drops random majority rows down to
    the minority count, producing no synthetic rows.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise SingleClass("both classes are required for balancing")
    minority_cls = int(classes[np.argmin(counts)])
    majority_cls = 1 - minority_cls
    gap = int(counts.max() - counts.min())

    if gap == 0:
        return BalancedSet(X=X.copy(), y=y.copy(), synthetic=np.zeros(len(y), dtype=bool))

    if undersample:
        rng = np.random.default_rng(seed)
        major_idx = np.flatnonzero(y == majority_cls)
        drop = rng.choice(major_idx, size=gap, replace=False)
        keep = np.setdiff1d(np.arange(len(y)), drop)
        return BalancedSet(X=X[keep], y=y[keep], synthetic=np.zeros(len(keep), dtype=bool))

    new = smote_synthesize(X[y == minority_cls], k, gap, seed)
    return BalancedSet(
        X=np.vstack([X, new]),
        y=np.concatenate([y, np.full(gap, minority_cls, dtype=np.int64)]),
        synthetic=np.concatenate([np.zeros(len(y), dtype=bool), np.ones(gap, dtype=bool)]),
    )
