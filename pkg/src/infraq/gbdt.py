"""Second-order gradient-boosted trees for binary classification.

Logistic loss, Newton boosting, exact greedy split enumeration. Trees are held
as flat node arrays (children, split feature, threshold, leaf value, cover);
``cover`` is the number of training rows that reach a node.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit
from scipy.special import expit

from .errors import (
    InvalidParameter,
    LengthMismatch,
    NaNFeature,
    SingleClass,
    SingleClassTraining,
    TooFewPerClass,
    TooFewRows,
)
from .resample import balance_training

LEAF = -1


@dataclass(frozen=True)
class Hyperparameters:
    max_depth: int = 6
    learning_rate: float = 0.3
    gamma: float = 0.0
    min_child_weight: float = 1.0
    n_estimators: int = 100
    reg_lambda: float = 1.0

    def __post_init__(self):
        if self.max_depth < 1:
            raise InvalidParameter("max_depth must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise InvalidParameter("learning_rate must lie in (0, 1]")
        if self.gamma < 0 or self.min_child_weight < 0 or self.reg_lambda < 0:
            raise InvalidParameter("gamma, min_child_weight and reg_lambda must be >= 0")
        if self.n_estimators < 1:
            raise InvalidParameter("n_estimators must be >= 1")


@dataclass(frozen=True)
class SearchSpace:
    """Sampling ranges for random search. Bounds are inclusive.

    ``learning_rate`` is drawn log-uniformly, ``gamma`` uniformly, and the
    integer parameters uniformly over their integer range.
    """

    max_depth: tuple[int, int] = (3, 10)
    learning_rate: tuple[float, float] = (0.01, 0.3)
    gamma: tuple[float, float] = (0.0, 5.0)
    min_child_weight: tuple[int, int] = (1, 10)
    n_estimators: tuple[int, int] = (50, 500)

    @classmethod
    def from_dict(cls, overrides: dict) -> "SearchSpace":
        return cls(**{k: tuple(v) for k, v in overrides.items()})

    def sample(self, rng: np.random.Generator) -> Hyperparameters:
        def integer(bounds):
            lo, hi = bounds
            return int(rng.integers(lo, hi + 1))

        def uniform(bounds):
            lo, hi = bounds
            return float(lo) if lo == hi else float(rng.uniform(lo, hi))

        lo, hi = self.learning_rate
        lr = float(lo) if lo == hi else float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
        return Hyperparameters(
            max_depth=integer(self.max_depth),
            learning_rate=lr,
            gamma=uniform(self.gamma),
            min_child_weight=integer(self.min_child_weight),
            n_estimators=integer(self.n_estimators),
        )


@dataclass
class Tree:
    left: np.ndarray
    right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    def is_leaf(self, node: int) -> bool:
        return self.left[node] == LEAF

    @classmethod
    def leaf(cls, value: float, cover: float = 1.0) -> "Tree":
        return cls.from_nodes([{"value": value, "cover": cover}])

    @classmethod
    def from_nodes(cls, nodes: Sequence[dict]) -> "Tree":
        """Build from a list of node dicts; internal nodes carry
        ``feature``, ``threshold``, ``left``, ``right`` (child indices)."""
        n = len(nodes)
        t = cls(
            left=np.full(n, LEAF, dtype=np.int64),
            right=np.full(n, LEAF, dtype=np.int64),
            feature=np.full(n, LEAF, dtype=np.int64),
            threshold=np.zeros(n),
            value=np.zeros(n),
            cover=np.zeros(n),
        )
        for i, node in enumerate(nodes):
            t.cover[i] = node.get("cover", np.nan)
            if "left" in node:
                t.left[i], t.right[i] = node["left"], node["right"]
                t.feature[i], t.threshold[i] = node["feature"], node["threshold"]
            else:
                t.value[i] = node["value"]
        return t

    def to_nested(self, node: int = 0) -> dict:
        if self.is_leaf(node):
            return {"leaf": float(self.value[node]), "cover": float(self.cover[node])}
        return {
            "feature": int(self.feature[node]),
            "threshold": float(self.threshold[node]),
            "cover": float(self.cover[node]),
            "left": self.to_nested(int(self.left[node])),
            "right": self.to_nested(int(self.right[node])),
        }

    @classmethod
    def from_nested(cls, root: dict) -> "Tree":
        nodes: list[dict] = []

        def visit(d):
            idx = len(nodes)
            nodes.append({})
            if "leaf" in d:
                nodes[idx] = {"value": d["leaf"], "cover": d["cover"]}
            else:
                entry = {"feature": d["feature"], "threshold": d["threshold"], "cover": d["cover"]}
                entry["left"] = visit(d["left"])
                entry["right"] = visit(d["right"])
                nodes[idx] = entry
            return idx

        visit(root)
        return cls.from_nodes(nodes)

    def max_depth(self) -> int:
        def depth(node):
            if self.is_leaf(node):
                return 0
            return 1 + max(depth(int(self.left[node])), depth(int(self.right[node])))

        return depth(0)


@dataclass
class PackedTrees:
    """All trees concatenated; child indices are global."""

    roots: np.ndarray
    left: np.ndarray
    right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    max_depth: int


@dataclass
class TreeEnsemble:
    trees: list[Tree]
    base_score: float
    params: Hyperparameters = field(default_factory=Hyperparameters)
    feature_names: tuple[str, ...] = ()

    @property
    def n_features(self) -> int:
        if self.feature_names:
            return len(self.feature_names)
        used = [int(t.feature.max()) for t in self.trees if t.n_nodes]
        return max(used, default=-1) + 1

    @cached_property
    def packed(self) -> PackedTrees:
        roots, offset = [], 0
        parts = {k: [] for k in ("left", "right", "feature", "threshold", "value", "cover")}
        depth = 0
        for t in self.trees:
            roots.append(offset)
            shift = lambda a: np.where(a == LEAF, LEAF, a + offset)  # noqa: E731
            parts["left"].append(shift(t.left))
            parts["right"].append(shift(t.right))
            for k in ("feature", "threshold", "value", "cover"):
                parts[k].append(getattr(t, k))
            depth = max(depth, t.max_depth())
            offset += t.n_nodes

        def cat(k, dtype):
            return np.concatenate(parts[k]).astype(dtype) if parts[k] else np.empty(0, dtype)

        return PackedTrees(
            roots=np.array(roots, dtype=np.int64),
            left=cat("left", np.int64),
            right=cat("right", np.int64),
            feature=cat("feature", np.int64),
            threshold=cat("threshold", np.float64),
            value=cat("value", np.float64),
            cover=cat("cover", np.float64),
            max_depth=depth,
        )

    def to_dict(self) -> dict:
        return {
            "format": "infraq-tree-ensemble/1",
            "objective": "binary:logistic",
            "base_score": float(self.base_score),
            "hyperparameters": asdict(self.params),
            "feature_names": list(self.feature_names),
            "trees": [t.to_nested() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeEnsemble":
        return cls(
            trees=[Tree.from_nested(t) for t in d["trees"]],
            base_score=d["base_score"],
            params=Hyperparameters(**d["hyperparameters"]),
            feature_names=tuple(d["feature_names"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TreeEnsemble":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --------------------------------------------------------------------------
# kernels


@njit(cache=True, nogil=True)
def _grow_tree(X, order, g, h, max_depth, min_child_weight, reg_lambda, gamma, eta,
               left, right, feature, threshold, value, cover, delta):
    n, n_feat = X.shape
    buf = np.empty(n, dtype=np.int64)
    cap = left.shape[0]
    stack = np.empty((cap, 4), dtype=np.int64)
    top = 0
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    n_nodes = 1
    while top >= 0:
        node = stack[top, 0]
        s = stack[top, 1]
        e = stack[top, 2]
        depth = stack[top, 3]
        top -= 1

        G = 0.0
        H = 0.0
        for k in range(s, e):
            r = order[0, k]
            G += g[r]
            H += h[r]
        cover[node] = e - s

        best_gain = 0.0
        best_f = -1
        best_thr = 0.0
        if depth < max_depth and e - s >= 2 and n_nodes + 2 <= cap:
            parent = G * G / (H + reg_lambda) if H + reg_lambda > 0 else 0.0
            for f in range(n_feat):
                GL = 0.0
                HL = 0.0
                for k in range(s, e - 1):
                    r = order[f, k]
                    GL += g[r]
                    HL += h[r]
                    xa = X[r, f]
                    xb = X[order[f, k + 1], f]
                    if xb <= xa:
                        continue
                    GR = G - GL
                    HR = H - HL
                    if HL < min_child_weight or HR < min_child_weight:
                        continue
                    if HL + reg_lambda <= 0 or HR + reg_lambda <= 0:
                        continue
                    gain = 0.5 * (GL * GL / (HL + reg_lambda) + GR * GR / (HR + reg_lambda)
                                  - parent) - gamma
                    if gain > best_gain:
                        thr = xa + (xb - xa) * 0.5
                        if thr <= xa:
                            thr = xb
                        best_gain = gain
                        best_f = f
                        best_thr = thr

        if best_f < 0:
            v = -eta * G / (H + reg_lambda) if H + reg_lambda > 0 else 0.0
            value[node] = v
            left[node] = -1
            right[node] = -1
            feature[node] = -1
            for k in range(s, e):
                delta[order[0, k]] = v
            continue

        # stable partition of every feature's sorted segment
        n_left = 0
        for f in range(n_feat):
            lo = s
            hi = 0
            for k in range(s, e):
                r = order[f, k]
                if X[r, best_f] < best_thr:
                    order[f, lo] = r
                    lo += 1
                else:
                    buf[hi] = r
                    hi += 1
            for k in range(hi):
                order[f, lo + k] = buf[k]
            n_left = lo - s

        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = lc
        right[node] = rc
        top += 1
        stack[top, 0] = rc
        stack[top, 1] = s + n_left
        stack[top, 2] = e
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = lc
        stack[top, 1] = s
        stack[top, 2] = s + n_left
        stack[top, 3] = depth + 1
    return n_nodes


@njit(cache=True, nogil=True)
def _predict_packed(X, roots, left, right, feature, threshold, value, base_score):
    n = X.shape[0]
    out = np.full(n, base_score)
    for i in range(n):
        acc = 0.0
        for t in range(roots.shape[0]):
            node = roots[t]
            while left[node] != -1:
                if X[i, feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[i] += acc
    return out


# --------------------------------------------------------------------------
# training and prediction


def _as_2d(X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if np.isnan(X).any():
        raise NaNFeature("feature matrix contains NaN")
    return X


def logistic_loss(y, margin) -> float:
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


def train(
    X,
    y,
    hp: Hyperparameters | None = None,
    seed: int | None = None,
    *,
    base_score: float | None = None,
    feature_names: Sequence[str] = (),
) -> TreeEnsemble:
    """Fit a boosted ensemble with logistic loss.

    ``base_score`` defaults to the log-odds of the training positive rate, which
    requires both classes. Passing it explicitly allows single-class data.
    Training has no stochastic step; ``seed`` is accepted for interface
    symmetry with the other stages and does not affect the result.
    """
    hp = hp or Hyperparameters()
    X = _as_2d(X)
    y = np.asarray(y, dtype=np.float64)
    if len(X) != len(y):
        raise LengthMismatch(f"{len(X)} rows vs {len(y)} labels")
    if len(y) < 2:
        raise TooFewRows("training needs at least 2 rows")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0/1")
    if base_score is None:
        rate = y.mean()
        if rate in (0.0, 1.0):
            raise SingleClassTraining("training labels contain a single class")
        base_score = math.log(rate / (1.0 - rate))

    n, n_feat = X.shape
    presorted = np.ascontiguousarray(
        np.stack([np.argsort(X[:, f], kind="stable") for f in range(n_feat)]).astype(np.int64)
    )
    cap = min(2 ** (hp.max_depth + 1) - 1, 2 * n - 1)
    margin = np.full(n, float(base_score))
    trees = []
    for _ in range(hp.n_estimators):
        p = expit(margin)
        g = p - y
        h = p * (1.0 - p)
        arrays = dict(
            left=np.empty(cap, np.int64),
            right=np.empty(cap, np.int64),
            feature=np.empty(cap, np.int64),
            threshold=np.zeros(cap),
            value=np.zeros(cap),
            cover=np.zeros(cap),
        )
        delta = np.zeros(n)
        used = _grow_tree(
            X, presorted.copy(), g, h, hp.max_depth, float(hp.min_child_weight),
            float(hp.reg_lambda), float(hp.gamma), float(hp.learning_rate),
            arrays["left"], arrays["right"], arrays["feature"], arrays["threshold"],
            arrays["value"], arrays["cover"], delta,
        )
        trees.append(Tree(**{k: v[:used].copy() for k, v in arrays.items()}))
        margin = margin + delta
    return TreeEnsemble(
        trees=trees, base_score=float(base_score), params=hp, feature_names=tuple(feature_names)
    )


def predict_margin(ensemble: TreeEnsemble, X) -> np.ndarray:
    """Log-odds: base score plus the routed leaf value of every tree.

    A 1-D input is treated as a single instance and a scalar is returned.
    """
    single = np.ndim(X) == 1
    X = _as_2d(X)
    pk = ensemble.packed
    out = _predict_packed(X, pk.roots, pk.left, pk.right, pk.feature, pk.threshold, pk.value,
                          float(ensemble.base_score))
    return float(out[0]) if single else out


def staged_margin(ensemble: TreeEnsemble, X):
    """Yield the margin after 0, 1, ..., T trees."""
    X = _as_2d(X)
    margin = np.full(len(X), float(ensemble.base_score))
    yield margin.copy()
    for tree in ensemble.trees:
        single = TreeEnsemble(trees=[tree], base_score=0.0, params=ensemble.params)
        margin = margin + predict_margin(single, X)
        yield margin.copy()


def predict_proba(ensemble: TreeEnsemble, X):
    return expit(predict_margin(ensemble, X))


def classify(ensemble: TreeEnsemble, X):
    """Class 1 iff the probability exceeds 0.5 (margin > 0)."""
    m = predict_margin(ensemble, X)
    return (np.asarray(m) > 0).astype(np.int64)


# --------------------------------------------------------------------------
# evaluation and tuning


def f1(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise LengthMismatch(f"{y_true.shape} vs {y_pred.shape}")
    tp = int(((y_true == 1) & (y_pred == 1)).sum())
    fp = int(((y_true != 1) & (y_pred == 1)).sum())
    fn = int(((y_true == 1) & (y_pred != 1)).sum())
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def split_train_test(X, y, ratio: float = 0.8, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stratified index split; each class contributes round(ratio * n_c) rows to train.

    Returns sorted (train_idx, test_idx).
    """
    y = np.asarray(y)
    if len(y) < 5:
        raise TooFewRows(f"need at least 5 rows to split, got {len(y)}")
    if len(np.unique(y)) < 2:
        raise SingleClass("both classes must be present to split")
    if not 0 < ratio < 1:
        raise InvalidParameter("ratio must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train = []
    for cls in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == cls))
        train.extend(idx[: int(math.floor(ratio * len(idx) + 0.5))])
    train = np.sort(np.array(train, dtype=np.int64))
    test = np.setdiff1d(np.arange(len(y)), train)
    return train, test


def stratified_folds(y, folds: int, seed) -> np.ndarray:
    """Fold id per row; each class is shuffled then dealt round-robin."""
    y = np.asarray(y)
    if folds < 2:
        raise InvalidParameter("cross-validation needs at least 2 folds")
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2 or counts.min() < folds:
        raise TooFewPerClass(f"each class needs >= {folds} rows, got {dict(zip(classes, counts))}")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(y), dtype=np.int64)
    for cls in classes:
        idx = rng.permutation(np.flatnonzero(y == cls))
        fold_of[idx] = np.arange(len(idx)) % folds
    return fold_of


def cross_validate(
    X,
    y,
    hp: Hyperparameters,
    folds: int = 10,
    seed: int = 0,
    *,
    smote: bool = True,
    smote_k: int = 5,
    return_scores: bool = False,
):
    """Mean F1 over stratified folds; SMOTE runs on each training part only."""
    X = _as_2d(X)
    y = np.asarray(y).astype(np.int64)
    fold_of = stratified_folds(y, folds, seed)
    scores = []
    for k in range(folds):
        tr, te = fold_of != k, fold_of == k
        Xtr, ytr = X[tr], y[tr]
        if smote:
            bal = balance_training(Xtr, ytr, seed=[seed, k], k=smote_k)
            Xtr, ytr = bal.X, bal.y
        model = train(Xtr, ytr, hp)
        scores.append(f1(y[te], classify(model, X[te])))
    mean = float(np.mean(scores))
    return (mean, scores) if return_scores else mean


@dataclass
class SearchResult:
    best: Hyperparameters
    best_score: float
    trials: list[tuple[Hyperparameters, float]]


def random_search(
    X,
    y,
    space: SearchSpace | None = None,
    n_iter: int = 50,
    seed: int = 0,
    *,
    folds: int = 10,
    smote: bool = True,
    smote_k: int = 5,
) -> SearchResult:
    """Random search maximising mean cross-validated F1.

    All draws share one fold assignment. The earliest draw wins ties.
    """
    if n_iter < 1:
        raise InvalidParameter("n_iter must be >= 1")
    space = space or SearchSpace()
    rng = np.random.default_rng([seed, 0])
    draws = [space.sample(rng) for _ in range(n_iter)]
    trials = []
    best, best_score = None, -math.inf
    for hp in draws:
        score = cross_validate(X, y, hp, folds=folds, seed=seed, smote=smote, smote_k=smote_k)
        trials.append((hp, score))
        if score > best_score:
            best, best_score = hp, score
    return SearchResult(best=best, best_score=best_score, trials=trials)
