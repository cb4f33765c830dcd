"""Binary hazard labels from two-cluster k-means on (heat_days, pm25_days)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateData, EmptyInput, warn
from .ingest import TractRecord, hazard_matrix

TOL = 1e-6
MAX_ITER = 300


@dataclass
class Standardization:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        safe = np.where(self.std > 0, self.std, 1.0)
        out = (values - self.mean) / safe
        out[:, self.std == 0] = 0.0
        return out


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    n_iter: int
    sse_history: list[float] = field(default_factory=list)

    @property
    def sse(self) -> float:
        return self.sse_history[-1]


@dataclass
class HazardLabeling:
    geoids: tuple[str, ...]
    labels: np.ndarray
    centroids: np.ndarray  # row 0 = low-hazard cluster, row 1 = high-hazard cluster
    silhouette: float
    standardization: Standardization

    def as_dict(self) -> dict[str, int]:
        return dict(zip(self.geoids, (int(v) for v in self.labels)))


def standardize(columns: np.ndarray) -> tuple[np.ndarray, Standardization]:
    """Z-score each column with the population standard deviation.

    A zero-variance column maps to zeros and triggers a warning.
    """
    columns = np.asarray(columns, dtype=np.float64)
    if columns.ndim == 1:
        columns = columns[:, None]
    if columns.shape[0] < 2:
        raise EmptyInput("standardization needs at least 2 rows")
    mean = columns.mean(axis=0)
    std = columns.std(axis=0)
    for j in np.flatnonzero(std == 0):
        warn(f"column {j} has zero variance; standardized to zeros")
    params = Standardization(mean=mean, std=std)
    return params.apply(columns), params


def _sse(points, labels, centroids) -> float:
    return float(((points - centroids[labels]) ** 2).sum())


def _assign(points, centroids) -> np.ndarray:
    d = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d, axis=1)  # ties -> cluster 0


def _plusplus(points, rng) -> np.ndarray:
    first = points[rng.integers(len(points))]
    d2 = ((points - first) ** 2).sum(axis=1)
    total = d2.sum()
    if not (total > 0 and np.isfinite(total)):
        # squared distances underflowed or overflowed: any other point will do
        d2 = np.any(points != first, axis=1).astype(np.float64)
        total = d2.sum()
    second = points[rng.choice(len(points), p=d2 / total)]
    return np.stack([first, second])


def _lloyd(points, centroids) -> KMeansResult:
    labels = _assign(points, centroids)
    history = [_sse(points, labels, centroids)]
    n_iter = 0
    for n_iter in range(1, MAX_ITER + 1):
        new = centroids.copy()
        for c in range(2):
            members = points[labels == c]
            if len(members):
                new[c] = members.mean(axis=0)
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        labels = _assign(points, centroids)
        for c in range(2):
            if not np.any(labels == c):
                # steal the point farthest from its own centroid
                far = int(np.argmax(((points - centroids[labels]) ** 2).sum(axis=1)))
                labels[far] = c
                centroids[c] = points[far]
        history.append(_sse(points, labels, centroids))
        if shift < TOL:
            break
    return KMeansResult(labels=labels, centroids=centroids, n_iter=n_iter, sse_history=history)


def kmeans_two(points: np.ndarray, seed: int, n_init: int = 4) -> KMeansResult:
    """Two-cluster k-means with k-means++ seeding.

    ``n_init`` independent seedings are drawn from one generator and the run
    with the lowest final SSE wins (first one on ties).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if len(points) < 2 or np.all(points == points[0]):
        raise DegenerateData("k-means needs at least 2 distinct points")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        result = _lloyd(points, _plusplus(points, rng))
        if best is None or result.sse < best.sse:
            best = result
    return best


def silhouette(points: np.ndarray, assignments: np.ndarray) -> float:
    """Mean silhouette over all points (Euclidean).

    Points in singleton clusters score 0, and so do points with a = b = 0.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    assignments = np.asarray(assignments)
    clusters = np.unique(assignments)
    if len(clusters) < 2:
        raise ValueError("silhouette needs at least 2 non-empty clusters")
    dist = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
    scores = np.zeros(len(points))
    for i in range(len(points)):
        own = assignments == assignments[i]
        n_own = own.sum()
        if n_own == 1:
            continue
        a = dist[i, own].sum() / (n_own - 1)
        b = min(dist[i, assignments == c].mean() for c in clusters if c != assignments[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


def assign_hazard_labels(records: Sequence[TractRecord], seed: int = 0) -> HazardLabeling:
    """Cluster tracts into low (0) and high (1) hazard groups.

    Rows are put in a canonical order before clustering, so the labels do not
    depend on the input row order. The high-hazard cluster is the one whose
    standardized centroid has the larger coordinate sum.
    """
    raw = hazard_matrix(records)
    order = np.lexsort(raw.T[::-1])
    z_sorted, params = standardize(raw[order])
    km = kmeans_two(z_sorted, seed)
    high = int(np.argmax(km.centroids.sum(axis=1)))
    labels_sorted = (km.labels == high).astype(np.int64)
    sil = silhouette(z_sorted, labels_sorted)

    labels = np.empty(len(raw), dtype=np.int64)
    labels[order] = labels_sorted
    centroids = km.centroids[[1 - high, high]]
    return HazardLabeling(
        geoids=tuple(rec.geoid for rec in records),
        labels=labels,
        centroids=centroids,
        silhouette=sil,
        standardization=params,
    )
