import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.metrics import silhouette_score

from infraq.errors import DataWarning, DegenerateData
from infraq.ingest import TractRecord
from infraq.labeling import assign_hazard_labels, kmeans_two, silhouette, standardize


def tracts(pairs):
    return [
        TractRecord(
            geoid=f"T{i}", city="c", road_pct=1.0, rail_pct=1.0, house_age_pct=1.0,
            park_pct=1.0, walkability=1.0, poi_density=1.0, heat_days=float(h),
            pm25_days=float(p), median_income=None,
        )
        for i, (h, p) in enumerate(pairs)
    ]


def silhouette_from_definition(points, labels):
    points = np.asarray(points, dtype=float).reshape(len(labels), -1)
    out = []
    for i in range(len(points)):
        own = [j for j in range(len(points)) if labels[j] == labels[i] and j != i]
        if not own:
            out.append(0.0)
            continue
        a = np.mean([np.linalg.norm(points[i] - points[j]) for j in own])
        b = min(
            np.mean([np.linalg.norm(points[i] - points[j]) for j in range(len(points))
                     if labels[j] == c])
            for c in set(labels) if c != labels[i]
        )
        out.append(0.0 if max(a, b) == 0 else (b - a) / max(a, b))
    return float(np.mean(out))


def blobs(rng, n=20, noise=0.1):
    pts = np.vstack([rng.normal(-5, noise, (n, 2)), rng.normal(5, noise, (n, 2))])
    return pts, np.repeat([0, 1], n)


# standardize


def test_two_point_column():
    z, _ = standardize(np.array([[1.0], [3.0]]))
    assert z[:, 0].tolist() == [-1.0, 1.0]


def test_constant_column_warns_and_zeroes():
    with pytest.warns(DataWarning):
        z, _ = standardize(np.array([[5.0], [5.0], [5.0]]))
    assert z[:, 0].tolist() == [0.0, 0.0, 0.0]


def test_three_point_column_uses_population_std():
    z, params = standardize(np.array([[0.0], [1.0], [2.0]]))
    expected = np.array([-1, 0, 1]) * np.sqrt(3 / 2)
    assert np.allclose(z[:, 0], expected, atol=1e-12)
    assert params.std[0] == pytest.approx(np.sqrt(2 / 3), abs=1e-15)


# k-means


def test_separated_blobs_recovered(rng):
    pts, truth = blobs(rng)
    res = kmeans_two(pts, seed=3)
    agree = (res.labels == truth).mean()
    assert agree in (0.0, 1.0)


def test_two_points_are_their_own_centroids():
    pts = np.array([[0.0, 0.0], [10.0, 10.0]])
    res = kmeans_two(pts, seed=0)
    assert sorted(map(tuple, res.centroids)) == [(0.0, 0.0), (10.0, 10.0)]


def best_partition_1d(values):
    best = None
    n = len(values)
    for mask in itertools.product([0, 1], repeat=n):
        mask = np.array(mask)
        if mask.sum() in (0, n):
            continue
        sse = sum(((values[mask == c] - values[mask == c].mean()) ** 2).sum() for c in (0, 1))
        if best is None or sse < best[0] - 1e-12:
            best = (sse, frozenset(map(frozenset, (values[mask == 0], values[mask == 1]))))
    return best[1]


def test_1d_partition_matches_enumeration():
    values = np.array([0.0, 1.0, 9.0, 10.0])
    res = kmeans_two(values[:, None], seed=0)
    found = frozenset(frozenset(values[res.labels == c]) for c in (0, 1))
    assert found == best_partition_1d(values) == frozenset({frozenset({0, 1}), frozenset({9, 10})})


def test_identical_points_rejected():
    with pytest.raises(DegenerateData):
        kmeans_two(np.ones((5, 2)), seed=0)


@given(arrays(np.float64, st.tuples(st.integers(3, 25), st.just(2)),
              elements=st.floats(-100, 100)), st.integers(0, 2**32 - 1))
def test_sse_never_increases(points, seed):
    if np.all(points == points[0]):
        return
    res = kmeans_two(points, seed=seed, n_init=1)
    hist = np.array(res.sse_history)
    assert np.all(np.diff(hist) <= 1e-9 * max(1.0, hist[0]))


@given(st.lists(st.floats(-50, 50), min_size=3, max_size=9, unique=True), st.integers(0, 99))
def test_1d_kmeans_reaches_optimal_partition(values, seed):
    values = np.array(values)
    # Lloyd's fixed points in 1-D are contiguous splits; several restarts
    # should find the best one on such small inputs.
    res = kmeans_two(values[:, None], seed=seed, n_init=8)
    found = sum(((values[res.labels == c] - values[res.labels == c].mean()) ** 2).sum()
                for c in (0, 1))
    order = np.sort(values)
    best = min(((order[:k] - order[:k].mean()) ** 2).sum()
               + ((order[k:] - order[k:].mean()) ** 2).sum() for k in range(1, len(order)))
    assert found <= best + 1e-9 * max(1.0, best) or found == pytest.approx(best, rel=1e-9)


# silhouette


def test_tight_blobs_score_high(rng):
    pts, truth = blobs(rng)
    s = silhouette(pts, truth)
    assert s > 0.9
    assert s == pytest.approx(silhouette_from_definition(pts, truth), abs=1e-12)


def test_coincident_points_score_zero():
    assert silhouette(np.zeros((4, 2)), np.array([0, 1, 0, 1])) == 0.0


def test_1d_hand_value():
    s = silhouette(np.array([0.0, 1.0, 9.0, 10.0]), np.array([0, 0, 1, 1]))
    hand = (8.5 / 9.5 + 7.5 / 8.5) / 2
    assert s == pytest.approx(hand, abs=1e-12)
    assert round(s, 3) == 0.889


@given(arrays(np.float64, st.tuples(st.integers(4, 20), st.integers(1, 3)),
              elements=st.floats(-10, 10)), st.data())
def test_silhouette_matches_oracles(points, data):
    labels = np.array(data.draw(st.lists(st.integers(0, 2), min_size=len(points),
                                         max_size=len(points))))
    if len(np.unique(labels)) < 2:
        return
    ours = silhouette(points, labels)
    assert ours == pytest.approx(silhouette_from_definition(points, labels), abs=1e-9)
    if len(np.unique(labels)) < len(points) and len(np.unique(points, axis=0)) == len(points):
        assert ours == pytest.approx(silhouette_score(points, labels), abs=1e-9)


# hazard labels


def test_separated_tracts_get_expected_labels():
    lab = assign_hazard_labels(tracts([(2, 0), (3, 1), (40, 9), (45, 10)]))
    assert lab.labels.tolist() == [0, 0, 1, 1]


def test_labels_do_not_depend_on_row_order(rng):
    pairs = [(float(h), float(p)) for h, p in zip(rng.uniform(0, 40, 60), rng.uniform(0, 12, 60))]
    base = assign_hazard_labels(tracts(pairs), seed=5).as_dict()
    perm = rng.permutation(60)
    shuffled_recs = [tracts(pairs)[i] for i in perm]
    again = assign_hazard_labels(shuffled_recs, seed=5).as_dict()
    assert base == again


def test_negating_hazards_flips_labels(rng):
    pairs = np.vstack([rng.normal([5, 1], 1, (15, 2)), rng.normal([30, 10], 1, (15, 2))])
    lab = assign_hazard_labels(tracts(pairs)).labels
    # negated data cannot be loaded (hazards are non-negative), so mirror the
    # geometry around a constant instead
    mirrored = assign_hazard_labels(tracts(pairs.max(axis=0) + 1 - pairs)).labels
    assert np.array_equal(mirrored, 1 - lab)


def test_high_cluster_has_larger_standardized_sum(rng):
    pairs = np.abs(rng.normal([10, 5], [8, 3], (80, 2)))
    lab = assign_hazard_labels(tracts(pairs), seed=1)
    z = lab.standardization.apply(pairs)
    sums = z.sum(axis=1)
    assert sums[lab.labels == 1].mean() > sums[lab.labels == 0].mean()
    assert lab.centroids[1].sum() > lab.centroids[0].sum()


def test_deterministic_given_seed(rng):
    pairs = np.abs(rng.normal([10, 5], [8, 3], (50, 2)))
    a = assign_hazard_labels(tracts(pairs), seed=9)
    b = assign_hazard_labels(tracts(pairs), seed=9)
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.centroids, b.centroids)
    assert a.silhouette == b.silhouette
