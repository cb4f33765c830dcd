"""Exact path-dependent Shapley attributions for :class:`~infraq.gbdt.TreeEnsemble`.

Unknown features are marginalised the way the trees saw the training data:
at a split on an unknown feature both branches are averaged with weights
proportional to their covers. ``tree_shap`` is the polynomial-time path
algorithm; ``brute_shap`` enumerates every feature subset with the same value
function and exists to check it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .errors import EmptyMatrix, MissingCover, NoCorrectInstances, TooManyFeatures, UnknownFeature
from .gbdt import TreeEnsemble, _as_2d, classify, predict_margin

MAX_BRUTE_FEATURES = 15


@dataclass
class ShapMatrix:
    values: np.ndarray  # (n_instances, n_features), log-odds units
    base_value: float
    margins: np.ndarray
    geoids: tuple[str, ...]
    feature_names: tuple[str, ...]
    tag: str = ""

    def local_accuracy_error(self) -> float:
        if len(self.values) == 0:
            return 0.0
        return float(np.max(np.abs(self.base_value + self.values.sum(axis=1) - self.margins)))


@dataclass
class DependenceSeries:
    feature: str
    x: np.ndarray
    shap: np.ndarray


# --------------------------------------------------------------------------
# path algorithm


@njit(cache=True)
def _extend(pf, pz, po, pw, start, depth, zero, one, feat):
    pf[start + depth] = feat
    pz[start + depth] = zero
    po[start + depth] = one
    pw[start + depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[start + i + 1] += one * pw[start + i] * (i + 1) / (depth + 1)
        pw[start + i] = zero * pw[start + i] * (depth - i) / (depth + 1)


@njit(cache=True)
def _unwind(pf, pz, po, pw, start, depth, idx):
    one = po[start + idx]
    zero = pz[start + idx]
    nxt = pw[start + depth]
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = pw[start + i]
            pw[start + i] = nxt * (depth + 1) / ((i + 1) * one)
            nxt = tmp - pw[start + i] * zero * (depth - i) / (depth + 1)
        else:
            pw[start + i] = pw[start + i] * (depth + 1) / (zero * (depth - i))
    for i in range(idx, depth):
        pf[start + i] = pf[start + i + 1]
        pz[start + i] = pz[start + i + 1]
        po[start + i] = po[start + i + 1]


@njit(cache=True)
def _unwound_sum(pz, po, pw, start, depth, idx):
    one = po[start + idx]
    zero = pz[start + idx]
    nxt = pw[start + depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = nxt * (depth + 1) / ((i + 1) * one)
            total += tmp
            nxt = pw[start + i] - tmp * zero * (depth - i) / (depth + 1)
        else:
            total += pw[start + i] / (zero * (depth - i) / (depth + 1))
    return total


@njit(cache=True)
def _tree_shap_one(x, phi, left, right, feature, threshold, value, cover, root,
                   pf, pz, po, pw, s_node, s_depth, s_parent, s_zero, s_one, s_feat):
    # Depth-first walk with an explicit stack (numba's cache cannot reload
    # self-recursive functions). Each node keeps its own copy of the path,
    # stored after its parent's, so a parent's path is still intact when its
    # second child is popped.
    top = 0
    s_node[0], s_depth[0], s_parent[0] = root, 0, 0
    s_zero[0], s_one[0], s_feat[0] = 1.0, 1.0, -1
    while top >= 0:
        node, depth, parent_start = s_node[top], s_depth[top], s_parent[top]
        zero, one, feat = s_zero[top], s_one[top], s_feat[top]
        top -= 1

        start = parent_start + depth
        for i in range(depth):
            pf[start + i] = pf[parent_start + i]
            pz[start + i] = pz[parent_start + i]
            po[start + i] = po[parent_start + i]
            pw[start + i] = pw[parent_start + i]
        _extend(pf, pz, po, pw, start, depth, zero, one, feat)

        if left[node] == -1:
            for i in range(1, depth + 1):
                w = _unwound_sum(pz, po, pw, start, depth, i)
                phi[pf[start + i]] += w * (po[start + i] - pz[start + i]) * value[node]
            continue

        f = feature[node]
        if x[f] < threshold[node]:
            hot = left[node]
            cold = right[node]
        else:
            hot = right[node]
            cold = left[node]
        in_zero = 1.0
        in_one = 1.0

        # a feature already on the path is unwound and re-entered with merged fractions
        child_depth = depth + 1
        k = 0
        while k <= depth:
            if pf[start + k] == f:
                break
            k += 1
        if k != depth + 1:
            in_zero = pz[start + k]
            in_one = po[start + k]
            _unwind(pf, pz, po, pw, start, depth, k)
            child_depth = depth

        # cold first so the hot branch is walked first
        top += 1
        s_node[top], s_depth[top], s_parent[top] = cold, child_depth, start
        s_zero[top], s_one[top], s_feat[top] = cover[cold] / cover[node] * in_zero, 0.0, f
        top += 1
        s_node[top], s_depth[top], s_parent[top] = hot, child_depth, start
        s_zero[top], s_one[top], s_feat[top] = cover[hot] / cover[node] * in_zero, in_one, f


@njit(cache=True, nogil=True)
def _shap_rows(X, n_features, roots, left, right, feature, threshold, value, cover, max_depth):
    n = X.shape[0]
    out = np.zeros((n, n_features))
    size = (max_depth + 2) * (max_depth + 3) // 2 + 1
    pf = np.empty(size, dtype=np.int64)
    pz = np.empty(size)
    po = np.empty(size)
    pw = np.empty(size)
    slots = 2 * (max_depth + 2)
    s_node = np.empty(slots, dtype=np.int64)
    s_depth = np.empty(slots, dtype=np.int64)
    s_parent = np.empty(slots, dtype=np.int64)
    s_zero = np.empty(slots)
    s_one = np.empty(slots)
    s_feat = np.empty(slots, dtype=np.int64)
    for i in range(n):
        for t in range(roots.shape[0]):
            _tree_shap_one(X[i], out[i], left, right, feature, threshold, value, cover, roots[t],
                           pf, pz, po, pw, s_node, s_depth, s_parent, s_zero, s_one, s_feat)
    return out


def _expected(left, right, cover, value, root) -> float:
    """Cover-weighted mean leaf value of one tree."""
    total, stack = 0.0, [(int(root), 1.0)]
    while stack:
        node, weight = stack.pop()
        if left[node] == -1:
            total += weight * value[node]
            continue
        for child in (left[node], right[node]):
            stack.append((int(child), weight * cover[child] / cover[node]))
    return total


def _check_cover(ensemble: TreeEnsemble) -> None:
    cover = ensemble.packed.cover
    if len(cover) and (not np.all(np.isfinite(cover)) or np.any(cover <= 0)):
        raise MissingCover("every node needs a positive, finite cover")


def expected_value(ensemble: TreeEnsemble) -> float:
    """Cover-weighted expected margin of the ensemble."""
    _check_cover(ensemble)
    pk = ensemble.packed
    return float(ensemble.base_score) + sum(
        _expected(pk.left, pk.right, pk.cover, pk.value, int(r)) for r in pk.roots
    )


def tree_shap(ensemble: TreeEnsemble, X) -> tuple[np.ndarray, float]:
    """Attributions for one instance (1-D) or many (2-D), plus the base value."""
    _check_cover(ensemble)
    single = np.ndim(X) == 1
    X = _as_2d(X)
    pk = ensemble.packed
    n_features = max(ensemble.n_features, X.shape[1])
    phi = _shap_rows(X, n_features, pk.roots, pk.left, pk.right, pk.feature, pk.threshold,
                     pk.value, pk.cover, pk.max_depth)
    base = expected_value(ensemble)
    return (phi[0] if single else phi), base


# --------------------------------------------------------------------------
# brute-force oracle


def _conditional(tree, x, known: frozenset, node: int = 0) -> float:
    if tree.is_leaf(node):
        return float(tree.value[node])
    f = int(tree.feature[node])
    l, r = int(tree.left[node]), int(tree.right[node])
    if f in known:
        return _conditional(tree, x, known, l if x[f] < tree.threshold[node] else r)
    return (tree.cover[l] * _conditional(tree, x, known, l)
            + tree.cover[r] * _conditional(tree, x, known, r)) / tree.cover[node]


def brute_shap(ensemble: TreeEnsemble, x) -> tuple[np.ndarray, float]:
    """Shapley values by enumerating all 2^M feature subsets."""
    _check_cover(ensemble)
    x = np.asarray(x, dtype=np.float64)
    m = max(ensemble.n_features, len(x))
    if m > MAX_BRUTE_FEATURES:
        raise TooManyFeatures(f"{m} features exceeds the brute-force limit {MAX_BRUTE_FEATURES}")

    def v(subset):
        return ensemble.base_score + sum(_conditional(t, x, subset) for t in ensemble.trees)

    values = {}
    for size in range(m + 1):
        for combo in itertools.combinations(range(m), size):
            values[frozenset(combo)] = v(frozenset(combo))
    phi = np.zeros(m)
    for i in range(m):
        others = [j for j in range(m) if j != i]
        for size in range(m):
            weight = math.factorial(size) * math.factorial(m - size - 1) / math.factorial(m)
            for combo in itertools.combinations(others, size):
                s = frozenset(combo)
                phi[i] += weight * (values[s | {i}] - values[s])
    return phi, values[frozenset()]


# --------------------------------------------------------------------------
# analysis helpers


def select_analysis_set(ensemble: TreeEnsemble, X, y) -> np.ndarray:
    """Indices of test rows the model classifies correctly, in input order."""
    X = _as_2d(X)
    y = np.asarray(y)
    if len(y) == 0:
        raise EmptyMatrix("empty test set")
    correct = np.flatnonzero(classify(ensemble, X) == y)
    if len(correct) == 0:
        raise NoCorrectInstances("no test instance is classified correctly")
    return correct


def explain(
    ensemble: TreeEnsemble,
    X,
    geoids: Sequence[str] | None = None,
    tag: str = "",
) -> ShapMatrix:
    X = _as_2d(X)
    phi, base = tree_shap(ensemble, X)
    names = ensemble.feature_names or tuple(f"f{j}" for j in range(phi.shape[1]))
    if geoids is None:
        geoids = tuple(str(i) for i in range(len(X)))
    return ShapMatrix(
        values=phi,
        base_value=base,
        margins=predict_margin(ensemble, X),
        geoids=tuple(geoids),
        feature_names=tuple(names),
        tag=tag,
    )


def global_importance(shap: ShapMatrix | np.ndarray) -> np.ndarray:
    """Mean absolute attribution per feature."""
    values = shap.values if isinstance(shap, ShapMatrix) else np.asarray(shap, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] == 0:
        raise EmptyMatrix("no instances to aggregate")
    return np.abs(values).mean(axis=0)


def dependence_series(shap: ShapMatrix, X, feature: str | int) -> DependenceSeries:
    """(feature value, attribution) pairs sorted by feature value, ties stable."""
    X = np.asarray(X, dtype=np.float64)
    if isinstance(feature, str):
        if feature not in shap.feature_names:
            raise UnknownFeature(feature)
        j = shap.feature_names.index(feature)
    else:
        if not 0 <= feature < shap.values.shape[1]:
            raise UnknownFeature(feature)
        j = int(feature)
    order = np.argsort(X[:, j], kind="stable")
    return DependenceSeries(feature=shap.feature_names[j], x=X[order, j], shap=shap.values[order, j])
