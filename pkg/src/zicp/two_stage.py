"""Two-stage intervals for zero-inflated outcomes.

Stage one classifies whether the outcome changes at all; inputs whose
change probability falls at or below a cutoff get the degenerate interval
{0}. Everyone else gets a conformal interval from a regressor trained only
on nonzero targets, with its quantile level adjusted (gamma) so the two
stages jointly spend the miscoverage budget.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Final, Sequence

import numpy as np

from .conformal import (
    ConformalModel,
    PredictionInterval,
    fit_cvplus,
    fit_jab,
    fit_jackknife_plus,
    fit_naive,
    fit_split,
    interval_bounds,
    point_predictions,
)
from .gbt import GbtModel, GbtParams, fit_classifier, predict_proba
from .records import ZERO_TOL, DatasetSplit, SupervisedSample, feature_matrix, target_vector

# estimate_beta result when nothing was predicted zero on the validation part
NO_ABSTENTIONS: Final = None

CUTOFF_MODES = ("quantile_r", "absolute")
GAMMA_FORMULAS = ("paper_eq6", "coverage_decomposition")


@dataclass(frozen=True)
class TwoStageConfig:
    clf_params: GbtParams
    reg_params: GbtParams
    conformal_method: str = "cvplus"
    mode: str = "absolute"
    gamma_formula: str = "paper_eq6"
    K: int = 5
    B: int = 50


@dataclass
class TwoStageModel:
    classifier: GbtModel
    conformal: ConformalModel
    cutoff_mode: str
    r_or_threshold: float
    alpha_r: float
    beta_hat: float | None  # NO_ABSTENTIONS when val produced no abstentions
    gamma: float
    alpha: float
    gamma_formula: str
    r_effective: float  # abstention rate fed to the gamma formula


def select_cutoff(probs_cal1: Sequence[float], r: float, mode: str = "absolute") -> float:
    """Probability cutoff: interpolated r-quantile of cal1 probabilities, or r itself."""
    if not 0 <= r < 1:
        raise ValueError(f"r must be in [0,1), got {r!r}")
    if mode == "absolute":
        return float(r)
    if mode == "quantile_r":
        arr = np.asarray(probs_cal1, dtype=np.float64)
        if arr.size == 0:
            raise ValueError("quantile_r cutoff needs non-empty calibration probabilities")
        return float(np.quantile(arr, r, method="linear"))
    raise ValueError(f"unknown cutoff mode {mode!r}")


def estimate_beta(probs_val: Sequence[float], targets_val: Sequence[float], alpha_r: float):
    """Fraction of predicted-zero validation points whose target really is zero."""
    probs = np.asarray(probs_val, dtype=np.float64)
    targets = np.asarray(targets_val, dtype=np.float64)
    if probs.shape != targets.shape:
        raise ValueError("probs_val and targets_val must have equal length")
    predicted_zero = probs <= alpha_r
    denom = int(predicted_zero.sum())
    if denom == 0:
        return NO_ABSTENTIONS
    truly_zero = np.abs(targets) < ZERO_TOL
    return float((predicted_zero & truly_zero).sum() / denom)


def compute_gamma(beta_hat, r: float, alpha: float, formula: str = "paper_eq6") -> float:
    """Quantile level for the regression stage, clamped to [0,1].

    paper_eq6 is the printed adjustment (1 - beta - r)/(1 - r), which
    contains no alpha; coverage_decomposition solves
    r*beta + (1-r)*gamma >= 1-alpha for gamma.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0,1), got {alpha!r}")
    if beta_hat is NO_ABSTENTIONS:
        return 1.0 - alpha
    if not 0 <= beta_hat <= 1:
        raise ValueError(f"beta_hat must be in [0,1], got {beta_hat!r}")
    if not 0 <= r <= 1:
        raise ValueError(f"r must be in [0,1], got {r!r}")
    if r == 1:
        raise ValueError("degenerate cutoff: r = 1 leaves no regression mass")
    if formula == "paper_eq6":
        gamma = (1.0 - beta_hat - r) / (1.0 - r)
    elif formula == "coverage_decomposition":
        gamma = (1.0 - alpha - r * beta_hat) / (1.0 - r)
    else:
        raise ValueError(f"unknown gamma formula {formula!r}")
    return min(1.0, max(0.0, gamma))


def _fit_conformal_stage(
    X: np.ndarray,
    y: np.ndarray,
    split: DatasetSplit,
    reg_params: GbtParams,
    method: str,
    alpha: float,
    K: int,
    B: int,
) -> ConformalModel:
    nonzero = np.abs(y) >= ZERO_TOL
    nz_train = split.train[nonzero[split.train]]
    if nz_train.size < 2:
        raise ValueError("nothing to regress: fewer than 2 nonzero training targets")
    if method == "naive":
        return fit_naive(X[nz_train], y[nz_train], reg_params, alpha)
    if method == "split":
        pool = np.concatenate([split.cal1, split.val])
        nz_cal = pool[nonzero[pool]]
        return fit_split(X, y, (nz_train, nz_cal), reg_params, alpha)
    if method in ("cvplus", "cvplus_foldagg"):
        variant = "canonical" if method == "cvplus" else "foldagg"
        return fit_cvplus(X[nz_train], y[nz_train], reg_params, alpha, K=K, variant=variant)
    if method == "jab":
        return fit_jab(X[nz_train], y[nz_train], reg_params, alpha, B=B)
    if method == "jackknife_plus":
        return fit_jackknife_plus(X[nz_train], y[nz_train], reg_params, alpha)
    raise ValueError(f"unknown conformal method {method!r}")


@dataclass
class StageComponents:
    """Fitted pieces that do not depend on the cutoff r."""

    classifier: GbtModel
    conformal: ConformalModel
    probs_cal1: np.ndarray
    probs_val: np.ndarray


def fit_components(
    samples: Sequence[SupervisedSample],
    split: DatasetSplit,
    config: TwoStageConfig,
    alpha: float = 0.2,
    classifier: GbtModel | None = None,
) -> StageComponents:
    X = feature_matrix(samples)
    y = target_vector(samples)
    if classifier is None:
        labels = (np.abs(y) >= ZERO_TOL).astype(np.float64)
        classifier = fit_classifier(X[split.train], labels[split.train], config.clf_params)
    probs_cal1 = np.atleast_1d(predict_proba(classifier, X[split.cal1]))
    probs_val = np.atleast_1d(predict_proba(classifier, X[split.val]))
    conformal = _fit_conformal_stage(
        X, y, split, config.reg_params, config.conformal_method, alpha, config.K, config.B
    )
    return StageComponents(classifier, conformal, probs_cal1, probs_val)


def _model_at(
    comp: StageComponents,
    config: TwoStageConfig,
    targets_val: np.ndarray,
    r: float,
    alpha: float,
) -> TwoStageModel:
    alpha_r = select_cutoff(comp.probs_cal1, r, config.mode)
    beta_hat = estimate_beta(comp.probs_val, targets_val, alpha_r)
    # Eq. 6's r is an abstention rate; under an absolute threshold the
    # observed cal1 abstention fraction plays that role.
    if config.mode == "quantile_r":
        r_effective = r
    else:
        r_effective = float(np.mean(comp.probs_cal1 <= alpha_r)) if len(comp.probs_cal1) else 0.0
    if r_effective == 1.0:
        r_effective = float(np.nextafter(1.0, 0.0))  # keep the formula finite
    gamma = compute_gamma(beta_hat, r_effective, alpha, config.gamma_formula)
    return TwoStageModel(
        classifier=comp.classifier,
        conformal=comp.conformal,
        cutoff_mode=config.mode,
        r_or_threshold=r,
        alpha_r=alpha_r,
        beta_hat=beta_hat,
        gamma=gamma,
        alpha=alpha,
        gamma_formula=config.gamma_formula,
        r_effective=r_effective,
    )


def fit_two_stage(
    samples: Sequence[SupervisedSample],
    split: DatasetSplit,
    clf_params: GbtParams,
    reg_params: GbtParams,
    conformal_method: str = "cvplus",
    alpha: float = 0.2,
    r: float = 0.5,
    mode: str = "absolute",
    formula: str = "paper_eq6",
    K: int = 5,
    B: int = 50,
) -> TwoStageModel:
    if mode not in CUTOFF_MODES:
        raise ValueError(f"unknown cutoff mode {mode!r}")
    if formula not in GAMMA_FORMULAS:
        raise ValueError(f"unknown gamma formula {formula!r}")
    config = TwoStageConfig(clf_params, reg_params, conformal_method, mode, formula, K, B)
    comp = fit_components(samples, split, config, alpha)
    y = target_vector(samples)
    return _model_at(comp, config, y[split.val], r, alpha)


def two_stage_bounds(model: TwoStageModel, X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch (lower, upper, degenerate) arrays; degenerate rows are {0}."""
    X = np.asarray(X, dtype=np.float64)
    probs = np.atleast_1d(predict_proba(model.classifier, X))
    degenerate = probs <= model.alpha_r
    lower = np.zeros(X.shape[0])
    upper = np.zeros(X.shape[0])
    live = ~degenerate
    if live.any():
        lo, hi = interval_bounds(model.conformal, X[live], level=model.gamma)
        lower[live] = lo
        upper[live] = hi
    return lower, upper, degenerate


def predict_two_stage(model: TwoStageModel, x) -> PredictionInterval:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    lower, upper, degenerate = two_stage_bounds(model, arr)
    if degenerate[0]:
        return PredictionInterval(0.0, 0.0, degenerate_zero=True)
    return PredictionInterval(float(lower[0]), float(upper[0]))


@dataclass(frozen=True)
class SweepRow:
    r: float
    mode: str
    method: str
    alpha: float
    coverage: float
    mean_length: float
    rmse: float  # on test points predicted nonzero; nan if none
    n_abstained: int
    n_predicted_change: int
    beta_hat: float | None
    gamma: float


def _evaluate_cell(model: TwoStageModel, X_test, y_test) -> tuple[float, float, float, int, int]:
    lower, upper, degenerate = two_stage_bounds(model, X_test)
    covered = np.where(
        degenerate, np.abs(y_test) < ZERO_TOL, (lower <= y_test) & (y_test <= upper)
    )
    lengths = np.where(degenerate, 0.0, upper - lower)
    live = ~degenerate
    if live.any():
        point = point_predictions(model.conformal, X_test[live])
        rmse = float(np.sqrt(np.mean((y_test[live] - point) ** 2)))
    else:
        rmse = float("nan")
    return (
        float(np.mean(covered)),
        float(np.mean(lengths)),
        rmse,
        int(degenerate.sum()),
        int(live.sum()),
    )


DEFAULT_GRID = tuple(round(0.05 * i, 2) for i in range(20))  # 0.0 .. 0.95


def sweep_r(
    samples: Sequence[SupervisedSample],
    split: DatasetSplit,
    config: TwoStageConfig,
    grid: Sequence[float] = DEFAULT_GRID,
    alpha: float = 0.2,
) -> tuple[list[SweepRow], int, bool]:
    """Evaluate the cutoff grid on the test partition.

    The classifier and the conformal regressor do not depend on r, so they
    are fitted once and re-thresholded per cell. Returns (rows, index of the
    selected row, feasible); selection minimizes mean length subject to
    coverage >= 1-alpha, falling back to the best-coverage cell when no cell
    meets the constraint.
    """
    if any(not 0 <= r < 1 for r in grid):
        raise ValueError("grid values must lie in [0,1)")
    comp = fit_components(samples, split, config, alpha)
    return sweep_from_components(comp, samples, split, config, grid, alpha)


def sweep_from_components(
    comp: StageComponents,
    samples: Sequence[SupervisedSample],
    split: DatasetSplit,
    config: TwoStageConfig,
    grid: Sequence[float] = DEFAULT_GRID,
    alpha: float = 0.2,
) -> tuple[list[SweepRow], int, bool]:
    if any(not 0 <= r < 1 for r in grid):
        raise ValueError("grid values must lie in [0,1)")
    X = feature_matrix(samples)
    y = target_vector(samples)
    rows: list[SweepRow] = []
    for r in grid:
        model = _model_at(comp, config, y[split.val], r, alpha)
        cov, mlen, rmse, n_abst, n_live = _evaluate_cell(model, X[split.test], y[split.test])
        rows.append(
            SweepRow(r, config.mode, config.conformal_method, alpha, cov, mlen, rmse,
                     n_abst, n_live, model.beta_hat, model.gamma)
        )

    feasible = [i for i, row in enumerate(rows) if row.coverage >= 1 - alpha]
    if feasible:
        best = min(feasible, key=lambda i: (rows[i].mean_length, i))
        return rows, best, True
    best = max(range(len(rows)), key=lambda i: (rows[i].coverage, -i))
    return rows, best, False
