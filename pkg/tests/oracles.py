"""Reference implementations shared by the unit and acceptance tests."""

import math

import numpy as np
import pytest

from infraq.gbdt import Tree, TreeEnsemble


def random_tree(rng, n_features, max_depth, consistent=True):
    """Random structure, thresholds and leaf values; leaf covers drawn, parents summed."""
    nodes = []

    def grow(depth):
        idx = len(nodes)
        nodes.append(None)
        if depth == max_depth or (depth > 0 and rng.random() < 0.3):
            nodes[idx] = {"value": float(rng.normal()), "cover": float(rng.integers(1, 20))}
            return nodes[idx]["cover"]
        entry = {"feature": int(rng.integers(n_features)),
                 "threshold": float(rng.integers(0, 4)) + 0.5}
        entry["left"] = len(nodes)
        cl = grow(depth + 1)
        entry["right"] = len(nodes)
        cr = grow(depth + 1)
        entry["cover"] = cl + cr if consistent else float(rng.uniform(1, 40))
        nodes[idx] = entry
        return entry["cover"]

    grow(0)
    return Tree.from_nodes(nodes)


def random_ensemble(rng, consistent=True):
    m = int(rng.integers(1, 6))
    trees = [random_tree(rng, m, int(rng.integers(1, 4)), consistent)
             for _ in range(int(rng.integers(1, 4)))]
    names = tuple(f"f{j}" for j in range(m))
    return TreeEnsemble(trees, base_score=float(rng.normal()), feature_names=names)


def enumerate_splits(X, g, h, rows, lam, gamma, mcw):
    """Every admissible (gain, feature, threshold) for the rows at one node."""
    G, H = g[rows].sum(), h[rows].sum()
    parent = G * G / (H + lam)
    out = []
    for f in range(X.shape[1]):
        values = np.unique(X[rows, f])
        for a, b in zip(values[:-1], values[1:]):
            thr = a + (b - a) * 0.5
            go_left = X[rows, f] < thr
            GL, HL = g[rows][go_left].sum(), h[rows][go_left].sum()
            GR, HR = G - GL, H - HL
            if HL < mcw or HR < mcw:
                continue
            gain = 0.5 * (GL**2 / (HL + lam) + GR**2 / (HR + lam) - parent) - gamma
            out.append((gain, f, thr))
    return out


def check_tree_against_enumeration(tree, X, g, h, params, node=0, rows=None, depth=0):
    rows = np.arange(len(X)) if rows is None else rows
    assert tree.cover[node] == len(rows)
    cands = enumerate_splits(X, g, h, rows, params.reg_lambda, params.gamma,
                             params.min_child_weight)
    best = max((c[0] for c in cands), default=-math.inf)
    if tree.is_leaf(node):
        assert depth == params.max_depth or len(rows) < 2 or best <= 1e-12
        G, H = g[rows].sum(), h[rows].sum()
        assert tree.value[node] == pytest.approx(
            -params.learning_rate * G / (H + params.reg_lambda), abs=1e-12)
        return
    f, thr = int(tree.feature[node]), float(tree.threshold[node])
    chosen = [c for c in cands if c[1] == f and c[2] == thr]
    assert chosen, "split is not an admissible candidate"
    assert chosen[0][0] == pytest.approx(best, abs=1e-10)
    near = [c for c in cands if c[0] >= best - 1e-10]
    if len(near) == 1:
        assert (f, thr) == near[0][1:]
    go_left = X[rows, f] < thr
    check_tree_against_enumeration(tree, X, g, h, params, int(tree.left[node]),
                                   rows[go_left], depth + 1)
    check_tree_against_enumeration(tree, X, g, h, params, int(tree.right[node]),
                                   rows[~go_left], depth + 1)
