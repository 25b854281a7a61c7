"""Conformal interval constructors over the boosted-tree regressor.

Four production methods (naive, split, CV+ in two variants, J+aB) plus a
full jackknife+ refit oracle for small n. All of them share one quantile
convention: the k-th order statistic with k = clamp(ceil(level*(n+1)), 1, n).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .gbt import (
    GbtModel,
    GbtParams,
    fit_regressor,
    model_from_dict,
    model_to_dict,
    predict_value,
)
from .seeding import child_seed

METHODS = ("naive", "split", "cvplus", "cvplus_foldagg", "jackknife_plus", "jab")

CONFORMAL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PredictionInterval:
    lower: float
    upper: float
    degenerate_zero: bool = False

    def __post_init__(self) -> None:
        if self.degenerate_zero and not (self.lower == self.upper == 0.0):
            raise ValueError("degenerate zero interval must be exactly {0}")
        if self.lower > self.upper:
            raise ValueError("interval bounds out of order")

    def width(self) -> float:
        return self.upper - self.lower

    def covers(self, y: float, zero_tol: float = 1e-12) -> bool:
        if self.degenerate_zero:
            return abs(y) < zero_tol
        return self.lower <= y <= self.upper


@dataclass
class ConformalModel:
    """Fitted interval constructor.

    scores holds absolute calibration residuals; point_model maps each
    calibration point to its fold/refit model (cvplus, jackknife_plus);
    excl_mask[i, b] is True when bootstrap model b never saw point i (jab).
    """

    method: str
    alpha: float
    models: list[GbtModel]
    scores: np.ndarray
    point_model: np.ndarray | None = None
    excl_mask: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def n_features(self) -> int:
        return self.models[0].n_features


def conformal_quantile(scores: Sequence[float], level: float) -> float:
    """Finite-sample-corrected empirical quantile of conformity scores."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("conformal_quantile: empty scores")
    if not 0 <= level <= 1:
        raise ValueError(f"level must be in [0,1], got {level!r}")
    k = _quantile_k(arr.size, level)
    return float(np.partition(arr, k - 1)[k - 1])


def _quantile_k(n: int, level: float) -> int:
    # epsilon guards against float noise pushing an exact integer up a rank
    k = math.ceil(level * (n + 1) - 1e-9)
    return min(max(k, 1), n)


def _rowwise_order_stat(mat: np.ndarray, k: int) -> np.ndarray:
    return np.partition(mat, k - 1, axis=1)[:, k - 1]


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0,1), got {alpha!r}")


def _as_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(y) != X.shape[0]:
        raise ValueError("X must be 2-D with one row per target")
    return X, y


def fit_naive(X, y, params: GbtParams, alpha: float) -> ConformalModel:
    """One regressor on all data, calibrated on its own in-sample residuals."""
    _check_alpha(alpha)
    X, y = _as_xy(X, y)
    model = fit_regressor(X, y, params)
    scores = np.abs(y - predict_value(model, X))
    return ConformalModel("naive", alpha, [model], scores, metadata={"seed": params.seed})


def fit_split(X, y, split: tuple[Sequence[int], Sequence[int]], params: GbtParams, alpha: float) -> ConformalModel:
    """Regressor on the proper training part, residuals from held-out calibration."""
    _check_alpha(alpha)
    X, y = _as_xy(X, y)
    train_idx = np.asarray(split[0], dtype=np.int64)
    cal_idx = np.asarray(split[1], dtype=np.int64)
    if train_idx.size == 0 or cal_idx.size == 0:
        raise ValueError("split conformal requires non-empty train and calibration parts")
    model = fit_regressor(X[train_idx], y[train_idx], params)
    scores = np.abs(y[cal_idx] - predict_value(model, X[cal_idx]))
    return ConformalModel("split", alpha, [model], scores, metadata={"seed": params.seed})


def fit_cvplus(
    X, y, params: GbtParams, alpha: float, K: int = 5, variant: str = "canonical"
) -> ConformalModel:
    """K-fold out-of-fold calibration; canonical CV+ or the fold-envelope variant."""
    _check_alpha(alpha)
    if variant not in ("canonical", "foldagg"):
        raise ValueError(f"unknown cvplus variant {variant!r}")
    X, y = _as_xy(X, y)
    n = len(y)
    if K < 2:
        raise ValueError("K must be >= 2")
    if K > n:
        raise ValueError(f"K = {K} exceeds n = {n}")
    perm = np.random.default_rng(child_seed(params.seed, "cvplus-folds")).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    for j, chunk in enumerate(np.array_split(perm, K)):
        fold_of[chunk] = j
    models = []
    scores = np.empty(n)
    for j in range(K):
        hold = fold_of == j
        mj = fit_regressor(
            X[~hold], y[~hold], replace(params, seed=child_seed(params.seed, "cvplus-fold", j))
        )
        models.append(mj)
        scores[hold] = np.abs(y[hold] - predict_value(mj, X[hold]))
    method = "cvplus" if variant == "canonical" else "cvplus_foldagg"
    return ConformalModel(
        method, alpha, models, scores, point_model=fold_of,
        metadata={"K": K, "seed": params.seed},
    )


def fit_jab(X, y, params: GbtParams, alpha: float, B: int = 50) -> ConformalModel:
    """Jackknife+-after-bootstrap: leave-one-out aggregates over B bootstrap models."""
    _check_alpha(alpha)
    X, y = _as_xy(X, y)
    n = len(y)
    if B < 20:
        raise ValueError("B must be at least 20: small ensembles can leave points never excluded")
    if n < 10:
        raise ValueError("need at least 10 samples")
    gen = np.random.default_rng(child_seed(params.seed, "jab-bootstrap"))
    models = []
    excl = np.empty((n, B), dtype=bool)
    preds = np.empty((B, n))
    for b in range(B):
        idx = gen.integers(0, n, size=n)
        excl[:, b] = np.bincount(idx, minlength=n) == 0
        mb = fit_regressor(X[idx], y[idx], replace(params, seed=child_seed(params.seed, "jab-model", b)))
        models.append(mb)
        preds[b] = predict_value(mb, X)
    n_excl = excl.sum(axis=1)
    keep = n_excl > 0
    n_dropped = int(n - keep.sum())
    if n_dropped:
        warnings.warn(
            f"{n_dropped} training point(s) appear in every bootstrap sample and are "
            "dropped from calibration; increase B to avoid this"
        )
    if not keep.any():
        raise ValueError("every training point appears in all bootstrap samples; increase B")
    loo = (excl[keep].astype(np.float64) * preds.T[keep]).sum(axis=1) / n_excl[keep]
    scores = np.abs(y[keep] - loo)
    return ConformalModel(
        "jab", alpha, models, scores, excl_mask=excl[keep],
        metadata={"B": B, "seed": params.seed, "n_dropped": n_dropped},
    )


def fit_jackknife_plus(X, y, params: GbtParams, alpha: float) -> ConformalModel:
    """Full leave-one-out refits. Test oracle only; refuses n > 200."""
    _check_alpha(alpha)
    X, y = _as_xy(X, y)
    n = len(y)
    if n > 200:
        raise ValueError("full jackknife+ is limited to n <= 200 (use cvplus or jab)")
    if n < 3:
        raise ValueError("need at least 3 samples")
    models = []
    scores = np.empty(n)
    for i in range(n):
        mask = np.ones(n, dtype=bool)
        mask[i] = False
        mi = fit_regressor(X[mask], y[mask], params)
        models.append(mi)
        scores[i] = abs(y[i] - predict_value(mi, X[i]))
    return ConformalModel(
        "jackknife_plus", alpha, models, scores,
        point_model=np.arange(n, dtype=np.int64), metadata={"seed": params.seed},
    )


def interval_bounds(model: ConformalModel, X, level: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Batch (lower, upper) bounds at coverage level `level` (default 1 - alpha)."""
    if level is None:
        level = 1.0 - model.alpha
    if not 0 <= level <= 1:
        raise ValueError(f"level must be in [0,1], got {level!r}")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features():
        raise ValueError(f"expected {model.n_features()} features, got shape {X.shape}")

    method = model.method
    if method in ("naive", "split"):
        q = conformal_quantile(model.scores, level)
        center = predict_value(model.models[0], X)
        return center - q, center + q

    if method in ("cvplus", "jackknife_plus"):
        fold_preds = np.column_stack([predict_value(m, X) for m in model.models])
        per_point = fold_preds[:, model.point_model]  # (n_x, n_cal)
        n_cal = model.scores.size
        k_lo = _quantile_k(n_cal, 1.0 - level)
        k_up = _quantile_k(n_cal, level)
        lower = _rowwise_order_stat(per_point - model.scores, k_lo)
        upper = _rowwise_order_stat(per_point + model.scores, k_up)
        return lower, np.maximum(lower, upper)

    if method == "cvplus_foldagg":
        fold_preds = np.column_stack([predict_value(m, X) for m in model.models])
        K = len(model.models)
        lows = np.empty((X.shape[0], K))
        highs = np.empty((X.shape[0], K))
        for j in range(K):
            qj = conformal_quantile(model.scores[model.point_model == j], level)
            lows[:, j] = fold_preds[:, j] - qj
            highs[:, j] = fold_preds[:, j] + qj
        return lows.min(axis=1), highs.max(axis=1)

    if method == "jab":
        preds = np.column_stack([predict_value(m, X) for m in model.models])  # (n_x, B)
        weights = model.excl_mask.astype(np.float64)
        # divide after the dot so constant ensembles aggregate exactly
        loo = (preds @ weights.T) / weights.sum(axis=1)  # (n_x, n_cal)
        n_cal = model.scores.size
        k_lo = _quantile_k(n_cal, 1.0 - level)
        k_up = _quantile_k(n_cal, level)
        lower = _rowwise_order_stat(loo - model.scores, k_lo)
        upper = _rowwise_order_stat(loo + model.scores, k_up)
        return lower, np.maximum(lower, upper)

    raise ValueError(f"unknown method {method!r}")


def point_predictions(model: ConformalModel, X) -> np.ndarray:
    """Point forecast per row: the mean over the method's fitted regressors."""
    X = np.asarray(X, dtype=np.float64)
    preds = np.column_stack([predict_value(m, X) for m in model.models])
    return preds.mean(axis=1)


def predict_interval(model: ConformalModel, x) -> PredictionInterval:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    lower, upper = interval_bounds(model, arr)
    return PredictionInterval(float(lower[0]), float(upper[0]))


def conformal_to_dict(model: ConformalModel) -> dict:
    return {
        "format_version": CONFORMAL_FORMAT_VERSION,
        "kind": "conformal",
        "method": model.method,
        "alpha": model.alpha,
        "scores": model.scores.tolist(),
        "point_model": None if model.point_model is None else model.point_model.tolist(),
        "excl_mask": None if model.excl_mask is None else model.excl_mask.astype(int).tolist(),
        "metadata": dict(model.metadata),
        "models": [model_to_dict(m) for m in model.models],
    }


def conformal_from_dict(doc: Mapping) -> ConformalModel:
    if doc.get("format_version") != CONFORMAL_FORMAT_VERSION or doc.get("kind") != "conformal":
        raise ValueError("unrecognized conformal document")
    return ConformalModel(
        method=doc["method"],
        alpha=float(doc["alpha"]),
        models=[model_from_dict(m) for m in doc["models"]],
        scores=np.asarray(doc["scores"], dtype=np.float64),
        point_model=None if doc["point_model"] is None else np.asarray(doc["point_model"], np.int64),
        excl_mask=None if doc["excl_mask"] is None else np.asarray(doc["excl_mask"], bool),
        metadata=dict(doc.get("metadata", {})),
    )


def save_conformal(model: ConformalModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(conformal_to_dict(model)))


def load_conformal(path: str | Path) -> ConformalModel:
    return conformal_from_dict(json.loads(Path(path).read_text()))
