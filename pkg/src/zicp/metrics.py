"""Evaluation metrics and statistical tests.

Everything here is a pure function of its arguments; randomized pieces
(bootstrap, k-fold assignment, permutation importance) derive their streams
from an explicit seed so results are reproducible and order-independent.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .conformal import PredictionInterval
from .records import ZERO_TOL
from .seeding import rng


@dataclass(frozen=True)
class EvaluationSummary:
    method: str
    cutoff: float
    horizon: str
    coverage: float
    mean_length: float
    calibration_error: float
    rmse: float
    mae: float
    r2: float
    auc: float
    sensitivity: float
    specificity: float
    n_test: int


@dataclass(frozen=True)
class SignificanceReport:
    comparison: str
    t_statistic: float
    p_value: float
    cohens_d: float
    ci_low: float
    ci_high: float
    n_runs: int

    def __post_init__(self) -> None:
        if self.ci_low > self.ci_high:
            raise ValueError("ci_low must not exceed ci_high")


def _as_bounds(intervals) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lo = np.empty(len(intervals))
    hi = np.empty(len(intervals))
    degen = np.zeros(len(intervals), dtype=bool)
    for i, iv in enumerate(intervals):
        if isinstance(iv, PredictionInterval):
            lo[i], hi[i], degen[i] = iv.lower, iv.upper, iv.degenerate_zero
        else:
            lo[i], hi[i] = iv
    if np.any(lo > hi):
        raise ValueError("interval lower bound exceeds upper bound")
    return lo, hi, degen


def coverage(intervals: Sequence, truths) -> float:
    """Fraction of truths inside their interval; a degenerate {0} covers only exact zeros."""
    y = np.asarray(truths, dtype=np.float64)
    if len(intervals) == 0:
        raise ValueError("no intervals")
    if len(intervals) != len(y):
        raise ValueError(f"length mismatch: {len(intervals)} intervals, {len(y)} truths")
    lo, hi, degen = _as_bounds(intervals)
    hit = (lo <= y) & (y <= hi)
    hit[degen] = np.abs(y[degen]) < ZERO_TOL
    return float(np.mean(hit))


def mean_length(intervals: Sequence) -> float:
    if len(intervals) == 0:
        raise ValueError("no intervals")
    lo, hi, degen = _as_bounds(intervals)
    widths = hi - lo
    widths[degen] = 0.0
    return float(np.mean(widths))


def marginal(per_cutoff_values) -> float:
    """Unweighted mean over the cutoff grid (marginal coverage or length)."""
    v = np.asarray(per_cutoff_values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no per-cutoff values")
    return float(np.mean(v))


def calibration_error(empirical_coverage: float, alpha: float) -> float:
    return empirical_coverage - (1.0 - alpha)


def _average_ranks(v: np.ndarray) -> np.ndarray:
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(v.shape[0], dtype=np.float64)
    sv = v[order]
    i = 0
    n = v.shape[0]
    while i < n:
        j = i
        while j + 1 < n and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def mann_whitney_auc(scores, labels) -> float:
    """Pairwise concordance P(score_pos > score_neg) with ties counted half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape[0] != y.shape[0]:
        raise ValueError("scores and labels length mismatch")
    pos = y == 1
    n_pos = int(np.sum(pos))
    n_neg = int(y.shape[0] - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes required to compute AUC")
    ranks = _average_ranks(s)
    return float((np.sum(ranks[pos]) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _sens_spec(scores: np.ndarray, y: np.ndarray, threshold: float = 0.5) -> tuple[float, float]:
    pred = scores >= threshold
    pos = y == 1
    sens = float(np.mean(pred[pos])) if np.any(pos) else math.nan
    spec = float(np.mean(~pred[~pos])) if np.any(~pos) else math.nan
    return sens, spec


def classification_metrics(scores, labels, k_folds: int | None = None, seed: int = 0):
    """(auc, sensitivity, specificity); pooled by default, fold-averaged when k_folds is set.

    Folds containing a single class are skipped with a warning.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if k_folds is None:
        return mann_whitney_auc(s, y), *_sens_spec(s, y)
    if k_folds < 2:
        raise ValueError("k_folds must be >= 2")
    perm = rng(seed, "metric-folds").permutation(s.shape[0])
    vals = []
    for fold in np.array_split(perm, k_folds):
        yf = y[fold]
        if np.all(yf == yf[0]):
            warnings.warn("single-class fold skipped in classification_metrics")
            continue
        vals.append((mann_whitney_auc(s[fold], yf), *_sens_spec(s[fold], yf)))
    if not vals:
        raise ValueError("every fold was single-class")
    arr = np.array(vals)
    return tuple(float(np.nanmean(arr[:, j])) for j in range(3))


def regression_metrics(preds, truths) -> tuple[float, float, float]:
    """(rmse, mae, r2); r2 is nan when the truths have zero variance."""
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(truths, dtype=np.float64)
    if p.shape[0] != y.shape[0]:
        raise ValueError("preds and truths length mismatch")
    if p.shape[0] == 0:
        raise ValueError("no values")
    err = p - y
    rmse = float(np.sqrt(np.mean(err**2)))
    mae = float(np.mean(np.abs(err)))
    sst = float(np.sum((y - np.mean(y)) ** 2))
    r2 = math.nan if sst == 0.0 else 1.0 - float(np.sum(err**2)) / sst
    return rmse, mae, r2


def bootstrap_ci(values, n_resamples: int = 1000, level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap CI for the mean."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values")
    if not 0 < level < 1:
        raise ValueError("level must be in (0,1)")
    gen = rng(seed, "bootstrap")
    idx = gen.integers(0, v.size, size=(n_resamples, v.size))
    means = np.mean(v[idx], axis=1)
    tail = (1.0 - level) / 2.0
    return (
        float(np.quantile(means, tail, method="linear")),
        float(np.quantile(means, 1.0 - tail, method="linear")),
    )


def _betacf(a: float, b: float, x: float, tol: float = 1e-10, max_iter: int = 500) -> float:
    # Lentz's continued fraction for the incomplete beta, as in standard references
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) to relative tolerance 1e-10."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must be in [0,1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf2(t: float, df: float) -> float:
    """Two-sided tail probability P(|T_df| >= |t|)."""
    if df <= 0:
        raise ValueError("df must be positive")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


def cohens_d(a, b) -> float:
    """Paired effect size: mean difference over sd of differences."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise ValueError("degenerate differences")
    return float(np.mean(d)) / sd


def paired_t_test(a, b) -> tuple[float, float, float]:
    """(t, two-sided p, Cohen's d) for paired samples."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape[0] != bv.shape[0]:
        raise ValueError("paired samples must have equal length")
    n = av.shape[0]
    if n < 2:
        raise ValueError("need at least 2 pairs")
    d = av - bv
    if np.all(d == 0.0):
        return 0.0, 1.0, 0.0
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise ValueError("degenerate differences")
    mean = float(np.mean(d))
    t = mean / (sd / math.sqrt(n))
    return t, student_t_sf2(t, n - 1), mean / sd


_IMPORTANCE_METRICS = ("auc", "accuracy", "rmse", "mae", "r2")


def _oriented_metric(metric: str, model, X: np.ndarray, y: np.ndarray) -> float:
    # error metrics are negated so that larger is always better
    if metric == "auc":
        return mann_whitney_auc(model.predict_proba(X), y)
    if metric == "accuracy":
        return float(np.mean((model.predict_proba(X) >= 0.5) == (y == 1)))
    preds = model.predict_value(X)
    rmse, mae, r2 = regression_metrics(preds, y)
    if metric == "rmse":
        return -rmse
    if metric == "mae":
        return -mae
    return r2


def permutation_importance(model, X_test, y_test, metric: str = "auc", n_repeats: int = 10, seed: int = 0):
    """Ranked (feature index, mean importance) list; importance is the performance
    drop from shuffling one column, averaged over n_repeats."""
    if metric not in _IMPORTANCE_METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {_IMPORTANCE_METRICS}")
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    X = np.ascontiguousarray(np.asarray(X_test, dtype=np.float64))
    y = np.asarray(y_test)
    baseline = _oriented_metric(metric, model, X, y)
    n, d = X.shape
    drops = np.zeros(d)
    for j in range(d):
        for rep in range(n_repeats):
            perm = rng(seed, f"perm-feature-{j}", rep).permutation(n)
            Xp = X.copy()
            Xp[:, j] = X[perm, j]
            drops[j] += baseline - _oriented_metric(metric, model, Xp, y)
    drops /= n_repeats
    order = sorted(range(d), key=lambda j: (-drops[j], j))
    return [(j, float(drops[j])) for j in order]
