"""Gradient-boosted decision trees, written from scratch.

Second-order (Newton) boosting: each round fits one binary tree to the
loss gradients, with leaf weight w = -soft_threshold(G, l1) / (H + l2)
and the matching regularized split gain. Exact greedy split search over
sorted feature values; the hot loops are numba-compiled.

Training rows are canonicalized (lexsort over feature columns, then the
target) before fitting, so predictions do not depend on input row order
when subsample = 1.0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from numba import njit

from .seeding import child_seed

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class GbtParams:
    learning_rate: float = 0.1
    max_depth: int = 7
    n_rounds: int = 700
    l1_alpha: float = 0.1
    l2_lambda: float = 1.0
    min_samples_leaf: int = 5
    subsample: float = 1.0
    early_stopping_rounds: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_depth < 1:
            raise ValueError("max_depth must be a positive int")
        if self.n_rounds < 0:
            raise ValueError("n_rounds must be non-negative")
        if self.l1_alpha < 0 or self.l2_lambda < 0:
            raise ValueError("l1_alpha and l2_lambda must be non-negative")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be a positive int")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must be in (0, 1]")
        if self.early_stopping_rounds is not None and self.early_stopping_rounds < 1:
            raise ValueError("early_stopping_rounds must be None or >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class Tree:
    """Flat-array binary tree. feature[i] == -1 marks a leaf; child ids are
    tree-local; value holds the learning-rate-scaled leaf weight."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def depth(self) -> int:
        def walk(node: int) -> int:
            if self.feature[node] < 0:
                return 0
            return 1 + max(walk(int(self.left[node])), walk(int(self.right[node])))

        return walk(0)

    def leaf_row_counts(self, X: np.ndarray) -> dict[int, int]:
        counts: dict[int, int] = {}
        for row in X:
            node = 0
            while self.feature[node] >= 0:
                node = int(self.left[node] if row[self.feature[node]] < self.threshold[node] else self.right[node])
            counts[node] = counts.get(node, 0) + 1
        return counts


@dataclass
class GbtModel:
    objective: str  # "logistic" | "squared"
    base_score: float
    trees: list[Tree]
    params: GbtParams
    n_features: int
    best_iteration: int | None = None
    train_loss_path: tuple[float, ...] = ()
    _packed: tuple | None = field(default=None, repr=False, compare=False)

    def predict_proba(self, x):
        return predict_proba(self, x)

    def predict_value(self, x):
        return predict_value(self, x)


@njit(cache=True)
def _leaf_score(G, H, l1, l2):
    if G > l1:
        t = G - l1
    elif G < -l1:
        t = G + l1
    else:
        t = 0.0
    denom = H + l2
    if denom <= 1e-12:
        return 0.0
    return t * t / denom


@njit(cache=True)
def _leaf_weight(G, H, l1, l2):
    if G > l1:
        t = G - l1
    elif G < -l1:
        t = G + l1
    else:
        t = 0.0
    denom = H + l2
    if denom <= 1e-12:
        return 0.0
    return -t / denom


@njit(cache=True)
def _grow_tree(X, g, h, rows, max_depth, min_leaf, l1, l2, lr, feat, thresh, left, right, value):
    cap = feat.shape[0]
    m_total = rows.shape[0]
    d = X.shape[1]
    stack_node = np.empty(cap + 1, np.int64)
    stack_start = np.empty(cap + 1, np.int64)
    stack_end = np.empty(cap + 1, np.int64)
    stack_depth = np.empty(cap + 1, np.int64)
    buf = np.empty(m_total, np.int64)
    n_nodes = 1
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = m_total
    stack_depth[0] = 0
    top = 1
    while top > 0:
        top -= 1
        nid = stack_node[top]
        s = stack_start[top]
        e = stack_end[top]
        dep = stack_depth[top]
        m = e - s
        G = 0.0
        H = 0.0
        for i in range(s, e):
            G += g[rows[i]]
            H += h[rows[i]]
        best_gain = 0.0
        best_feat = -1
        best_thresh = 0.0
        if dep < max_depth and m >= 2 * min_leaf and n_nodes + 2 <= cap:
            parent = _leaf_score(G, H, l1, l2)
            vals = np.empty(m, np.float64)
            for f in range(d):
                for i in range(m):
                    vals[i] = X[rows[s + i], f]
                order = np.argsort(vals, kind="mergesort")
                gl = 0.0
                hl = 0.0
                for i in range(m - 1):
                    ri = rows[s + order[i]]
                    gl += g[ri]
                    hl += h[ri]
                    if i + 1 < min_leaf or m - i - 1 < min_leaf:
                        continue
                    v0 = vals[order[i]]
                    v1 = vals[order[i + 1]]
                    if v0 == v1:
                        continue
                    gain = _leaf_score(gl, hl, l1, l2) + _leaf_score(G - gl, H - hl, l1, l2) - parent
                    # tie window: rounding noise (~1e-13) must not decide between
                    # candidates whose gains are equal in exact arithmetic, or the
                    # chosen split would flip under benign target translations
                    if gain > best_gain + 1e-9 * (abs(best_gain) + 1.0):
                        mid = 0.5 * (v0 + v1)
                        if not (mid > v0):
                            mid = v1
                        best_gain = gain
                        best_feat = f
                        best_thresh = mid
        if best_feat < 0:
            feat[nid] = -1
            thresh[nid] = 0.0
            left[nid] = -1
            right[nid] = -1
            value[nid] = lr * _leaf_weight(G, H, l1, l2)
            continue
        nl = 0
        for i in range(s, e):
            if X[rows[i], best_feat] < best_thresh:
                buf[nl] = rows[i]
                nl += 1
        nr = nl
        for i in range(s, e):
            if not (X[rows[i], best_feat] < best_thresh):
                buf[nr] = rows[i]
                nr += 1
        for i in range(m):
            rows[s + i] = buf[i]
        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feat[nid] = best_feat
        thresh[nid] = best_thresh
        left[nid] = lid
        right[nid] = rid
        value[nid] = 0.0
        stack_node[top] = lid
        stack_start[top] = s
        stack_end[top] = s + nl
        stack_depth[top] = dep + 1
        top += 1
        stack_node[top] = rid
        stack_start[top] = s + nl
        stack_end[top] = e
        stack_depth[top] = dep + 1
        top += 1
    return n_nodes


@njit(cache=True)
def _predict_margin(X, feat, thresh, left, right, value, starts, out):
    n = X.shape[0]
    n_trees = starts.shape[0] - 1
    for i in range(n):
        acc = 0.0
        for t in range(n_trees):
            off = starts[t]
            node = 0
            while feat[off + node] >= 0:
                if X[i, feat[off + node]] < thresh[off + node]:
                    node = left[off + node]
                else:
                    node = right[off + node]
            acc += value[off + node]
        out[i] += acc


def _pack(trees: Sequence[Tree]) -> tuple:
    if not trees:
        starts = np.zeros(1, np.int64)
        z = np.zeros(0)
        return z.astype(np.int64), z, z.astype(np.int64), z.astype(np.int64), z, starts
    feat = np.concatenate([t.feature for t in trees])
    thresh = np.concatenate([t.threshold for t in trees])
    left = np.concatenate([t.left for t in trees])
    right = np.concatenate([t.right for t in trees])
    value = np.concatenate([t.value for t in trees])
    starts = np.zeros(len(trees) + 1, np.int64)
    np.cumsum([len(t.feature) for t in trees], out=starts[1:])
    return feat, thresh, left, right, value, starts


def _margin(model: GbtModel, X: np.ndarray) -> np.ndarray:
    if model._packed is None:
        model._packed = _pack(model.trees)
    out = np.full(X.shape[0], model.base_score, dtype=np.float64)
    if model.trees:
        _predict_margin(np.ascontiguousarray(X, dtype=np.float64), *model._packed, out)
    return out


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_grad_hess(y: np.ndarray, margin: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First/second derivatives of the per-sample log loss wrt the margin."""
    p = _sigmoid(margin)
    return p - y, p * (1.0 - p)


def _logloss(y: np.ndarray, margin: np.ndarray) -> float:
    p = np.clip(_sigmoid(margin), 1e-15, 1.0 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def _check_X(X: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValueError("X must be a 2-D sample matrix")
    bad = np.flatnonzero(~np.isfinite(X).all(axis=0))
    if bad.size:
        raise ValueError(f"non-finite feature values in column {int(bad[0])}")
    return X


def _fit(X, y, params: GbtParams, objective: str, eval_set) -> GbtModel:
    X = _check_X(X)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    if y.shape != (n,):
        raise ValueError("y length must match X rows")
    if n < 2:
        raise ValueError("need at least 2 samples")

    if objective == "logistic":
        uniq = np.unique(y)
        if not np.all(np.isin(uniq, (0.0, 1.0))):
            raise ValueError("labels must be 0/1")
        if uniq.size < 2:
            raise ValueError("degenerate labels: only one class present")
    else:
        if not np.isfinite(y).all():
            raise ValueError("non-finite target values")

    # canonical order: primary key X[:,0], then remaining columns, then y.
    # Sorting before any floating-point reduction makes the fit (base score
    # included) bit-identical under training row permutations.
    order = np.lexsort((y,) + tuple(X[:, j] for j in range(d - 1, -1, -1)))
    X = np.ascontiguousarray(X[order])
    y = y[order]

    if objective == "logistic":
        prior = float(np.mean(y))
        base = math.log(prior / (1.0 - prior))
    elif np.all(y == y[0]):
        base = float(y[0])  # constant target: mean must be exact, not a rounded sum
    else:
        base = float(np.mean(y))

    if eval_set is not None:
        X_eval = _check_X(eval_set[0])
        y_eval = np.asarray(eval_set[1], dtype=np.float64)
        F_eval = np.full(len(y_eval), base)
    patience = params.early_stopping_rounds

    F = np.full(n, base)
    trees: list[Tree] = []
    losses: list[float] = []
    m_sub = max(1, int(params.subsample * n))
    gen = np.random.default_rng(child_seed(params.seed, "gbt-subsample"))
    best_metric = math.inf
    best_iter: int | None = None

    for rnd in range(params.n_rounds):
        if objective == "logistic":
            g, h = logistic_grad_hess(y, F)
        else:
            g, h = F - y, np.ones(n)
        if m_sub < n:
            rows = np.sort(gen.choice(n, size=m_sub, replace=False)).astype(np.int64)
        else:
            rows = np.arange(n, dtype=np.int64)
        cap = min(2 ** (params.max_depth + 1) - 1, 2 * max(1, m_sub // params.min_samples_leaf) + 1)
        feat = np.empty(cap, np.int64)
        thresh = np.empty(cap, np.float64)
        left = np.empty(cap, np.int64)
        right = np.empty(cap, np.int64)
        value = np.empty(cap, np.float64)
        n_nodes = _grow_tree(
            X, g, h, rows,
            params.max_depth, params.min_samples_leaf,
            params.l1_alpha, params.l2_lambda, params.learning_rate,
            feat, thresh, left, right, value,
        )
        tree = Tree(feat[:n_nodes].copy(), thresh[:n_nodes].copy(), left[:n_nodes].copy(),
                    right[:n_nodes].copy(), value[:n_nodes].copy())
        trees.append(tree)
        packed = _pack([tree])
        _predict_margin(X, *packed, F)
        losses.append(_logloss(y, F) if objective == "logistic" else float(np.mean((y - F) ** 2)))

        if eval_set is not None and patience is not None:
            _predict_margin(X_eval, *packed, F_eval)
            metric = _logloss(y_eval, F_eval) if objective == "logistic" else float(
                math.sqrt(np.mean((y_eval - F_eval) ** 2))
            )
            if metric < best_metric:
                best_metric = metric
                best_iter = rnd
            elif best_iter is not None and rnd - best_iter >= patience:
                break

    if best_iter is not None:
        trees = trees[: best_iter + 1]
        losses = losses[: best_iter + 1]
    return GbtModel(objective, base, trees, params, d,
                    best_iteration=best_iter, train_loss_path=tuple(losses))


def fit_classifier(X, y, params: GbtParams, eval_set=None) -> GbtModel:
    """Boosted logistic model of P{label = 1 | x}; base score is the prior log-odds."""
    return _fit(X, y, params, "logistic", eval_set)


def fit_regressor(X, y, params: GbtParams, eval_set=None) -> GbtModel:
    """Boosted squared-error model; base score is mean(y)."""
    return _fit(X, y, params, "squared", eval_set)


def _predict_input(model: GbtModel, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got shape {np.shape(x)}")
    return np.ascontiguousarray(arr), single


def predict_proba(model: GbtModel, x):
    if model.objective != "logistic":
        raise ValueError("predict_proba requires a logistic model")
    arr, single = _predict_input(model, x)
    p = _sigmoid(_margin(model, arr))
    return float(p[0]) if single else p


def predict_value(model: GbtModel, x):
    if model.objective != "squared":
        raise ValueError("predict_value requires a squared-error model")
    arr, single = _predict_input(model, x)
    v = _margin(model, arr)
    return float(v[0]) if single else v


def model_to_dict(model: GbtModel) -> dict:
    p = model.params
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "gbt",
        "objective": model.objective,
        "base_score": model.base_score,
        "n_features": model.n_features,
        "params": {
            "learning_rate": p.learning_rate,
            "max_depth": p.max_depth,
            "n_rounds": p.n_rounds,
            "l1_alpha": p.l1_alpha,
            "l2_lambda": p.l2_lambda,
            "min_samples_leaf": p.min_samples_leaf,
            "subsample": p.subsample,
            "early_stopping_rounds": p.early_stopping_rounds,
            "seed": p.seed,
        },
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
            }
            for t in model.trees
        ],
    }


def model_from_dict(doc: Mapping) -> GbtModel:
    if doc.get("format_version") != MODEL_FORMAT_VERSION or doc.get("kind") != "gbt":
        raise ValueError("unrecognized model document")
    trees = [
        Tree(
            np.asarray(t["feature"], np.int64),
            np.asarray(t["threshold"], np.float64),
            np.asarray(t["left"], np.int64),
            np.asarray(t["right"], np.int64),
            np.asarray(t["value"], np.float64),
        )
        for t in doc["trees"]
    ]
    return GbtModel(
        objective=doc["objective"],
        base_score=float(doc["base_score"]),
        trees=trees,
        params=GbtParams(**doc["params"]),
        n_features=int(doc["n_features"]),
    )


def save_model(model: GbtModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path: str | Path) -> GbtModel:
    return model_from_dict(json.loads(Path(path).read_text()))


def grid_search(
    X,
    y,
    objective: str,
    grid: Mapping[str, Sequence],
    k: int = 5,
    seed: int = 0,
) -> tuple[GbtParams, float]:
    """Exhaustive grid search scored by k-fold CV (AUC up / RMSE down).

    Ties keep the first grid entry in declaration order. A fold whose train
    or validation part is single-class under the logistic objective marks
    that configuration as worst.
    """
    from .metrics import mann_whitney_auc

    if k < 2:
        raise ValueError("k must be >= 2")
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("grid must be non-empty")
    X = _check_X(X)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    perm = np.random.default_rng(child_seed(seed, "grid-folds")).permutation(n)
    folds = np.array_split(perm, k)

    keys = list(grid.keys())
    best_params: GbtParams | None = None
    best_score = -math.inf if objective == "logistic" else math.inf
    for combo in product(*(grid[key] for key in keys)):
        params = replace(GbtParams(seed=seed), **dict(zip(keys, combo)))
        fold_scores = []
        degenerate = False
        for j in range(k):
            valid = folds[j]
            train = np.concatenate([folds[i] for i in range(k) if i != j])
            if objective == "logistic" and (
                np.unique(y[train]).size < 2 or np.unique(y[valid]).size < 2
            ):
                degenerate = True
                break
            if objective == "logistic":
                model = fit_classifier(X[train], y[train], params)
                fold_scores.append(mann_whitney_auc(predict_proba(model, X[valid]), y[valid]))
            else:
                model = fit_regressor(X[train], y[train], params)
                err = y[valid] - predict_value(model, X[valid])
                fold_scores.append(math.sqrt(float(np.mean(err**2))))
        if degenerate:
            score = -math.inf if objective == "logistic" else math.inf
        else:
            score = float(np.mean(fold_scores))
        better = score > best_score if objective == "logistic" else score < best_score
        if best_params is None or better:
            best_score = score
            best_params = params
    assert best_params is not None
    return best_params, best_score
