"""Command-line entry point.

Every subcommand is deterministic given its effective configuration:
flags override config-file values, which override defaults; the root seed
falls back to the ZICP_SEED environment variable. Outputs start with
`#`-prefixed comment lines carrying the version, the seed, a hash of the
effective configuration, and the configuration itself.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import warnings
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .cohort import CohortSpec, generate, load_spec
from .conformal import (
    METHODS,
    fit_cvplus,
    fit_jab,
    fit_jackknife_plus,
    fit_naive,
    fit_split,
    save_conformal,
)
from .gbt import GbtParams, fit_classifier, fit_regressor, save_model
from .ledd import FEATURE_NAMES, ConversionTable, Demographics, FeatureConfig, build_supervised, ledd_series
from .metrics import classification_metrics, regression_metrics, calibration_error
from .records import (
    HORIZONS,
    SEX_CODES,
    ZERO_TOL,
    DataError,
    feature_matrix,
    load_samples,
    load_visits,
    make_split,
    target_vector,
    write_samples,
)
from .reports import (
    REPORT_METHODS,
    ReportConfig,
    horizon_report,
    paired_method_runs,
    significance_from_runs,
    write_csv,
    write_significance,
)
from .seeding import child_seed
from .two_stage import (
    CUTOFF_MODES,
    DEFAULT_GRID,
    GAMMA_FORMULAS,
    TwoStageConfig,
    fit_components,
    select_cutoff,
    sweep_from_components,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # exit code 1, not argparse's 2
        raise UsageError(message)


@dataclass(frozen=True)
class RunConfig:
    """Effective settings of one invocation, echoed into output headers."""

    command: str
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    alpha: float = 0.2
    methods: tuple[str, ...] = ("cvplus",)
    grid: tuple[float, ...] = DEFAULT_GRID
    horizons: tuple[str, ...] = HORIZONS
    gamma_formula: str = "paper_eq6"
    cutoff_mode: str = "absolute"
    seed: int = 0
    learner: GbtParams = field(default_factory=GbtParams)
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0 < self.alpha < 1:
            raise UsageError(f"alpha must be in (0,1), got {self.alpha}")
        for m in self.methods:
            if m not in METHODS:
                raise UsageError(f"unknown method {m!r}, expected one of {METHODS}")
        for h in self.horizons:
            if h not in HORIZONS:
                raise UsageError(f"unknown horizon {h!r}, expected one of {HORIZONS}")
        if self.gamma_formula not in GAMMA_FORMULAS:
            raise UsageError(f"unknown gamma formula {self.gamma_formula!r}")
        if self.cutoff_mode not in CUTOFF_MODES:
            raise UsageError(f"unknown cutoff mode {self.cutoff_mode!r}")

    def validate_paths(self) -> None:
        for p in self.inputs:
            if not Path(p).exists():
                raise DataError(f"no such file: {p}")

    def header(self) -> list[str]:
        doc = {
            "command": self.command,
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
            "alpha": self.alpha,
            "methods": list(self.methods),
            "grid": list(self.grid),
            "horizons": list(self.horizons),
            "gamma_formula": self.gamma_formula,
            "cutoff_mode": self.cutoff_mode,
            "seed": self.seed,
            "learner": {
                "learning_rate": self.learner.learning_rate,
                "max_depth": self.learner.max_depth,
                "n_rounds": self.learner.n_rounds,
                "l1": self.learner.l1_alpha,
                "l2": self.learner.l2_lambda,
                "min_samples_leaf": self.learner.min_samples_leaf,
                "subsample": self.learner.subsample,
                "early_stopping_rounds": self.learner.early_stopping_rounds,
                "seed": self.learner.seed,
            },
            **{k: v for k, v in sorted(self.extras.items())},
        }
        blob = json.dumps(doc, sort_keys=True, default=str)
        digest = hashlib.sha256(blob.encode()).hexdigest()[:12]
        return [f"zicp {__version__} seed={self.seed} config={digest}", f"config {blob}"]


def _parse_grid(text: str) -> tuple[float, ...]:
    try:
        if ":" in text:
            start_s, stop_s, step_s = text.split(":")
            start, stop, step = float(start_s), float(stop_s), float(step_s)
            if step <= 0:
                raise ValueError("step must be positive")
            values = []
            v = start
            while v <= stop + 1e-9:
                values.append(round(v, 10))
                v += step
            return tuple(values)
        return tuple(float(t) for t in text.split(","))
    except ValueError as exc:
        raise UsageError(f"bad grid {text!r}: {exc}") from exc


def _parse_list(text: str, allowed: Sequence[str], what: str) -> tuple[str, ...]:
    items = tuple(t.strip() for t in text.split(",") if t.strip())
    if not items:
        raise UsageError(f"empty {what} list")
    for item in items:
        if item not in allowed:
            raise UsageError(f"unknown {what} {item!r}, expected one of {tuple(allowed)}")
    return items


def _merge(args: argparse.Namespace, defaults: dict) -> dict:
    """Flags > config file > defaults; unknown config keys are usage errors."""
    eff = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text())
        except FileNotFoundError as exc:
            raise DataError(str(exc)) from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"{config_path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise DataError(f"{config_path}: config must be a JSON object")
        unknown = set(doc) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        eff.update(doc)
    for key in defaults:
        v = getattr(args, key, None)
        if v is not None:
            eff[key] = v
    return eff


def _resolve_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get("ZICP_SEED")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"ZICP_SEED must be an integer, got {env!r}") from exc
    return 0


def _learner_params(eff: dict) -> GbtParams:
    return GbtParams(
        learning_rate=float(eff["learning_rate"]),
        max_depth=int(eff["max_depth"]),
        n_rounds=int(eff["n_rounds"]),
        l1_alpha=float(eff["l1"]),
        l2_lambda=float(eff["l2"]),
        min_samples_leaf=int(eff["min_samples_leaf"]),
        subsample=float(eff["subsample"]),
        early_stopping_rounds=None if eff["early_stopping"] is None else int(eff["early_stopping"]),
        seed=int(eff["seed"]),
    )


_LEARNER_DEFAULTS = {
    "learning_rate": 0.1,
    "max_depth": 7,
    "n_rounds": 700,
    "l1": 0.1,
    "l2": 1.0,
    "min_samples_leaf": 5,
    "subsample": 1.0,
    "early_stopping": None,
}

# report/sweep fits run many models, so they default to a lighter learner
_LIGHT_LEARNER = {**_LEARNER_DEFAULTS, "max_depth": 3, "n_rounds": 150}


def _add_learner_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--max-depth", type=int, dest="max_depth")
    p.add_argument("--n-rounds", type=int, dest="n_rounds")
    p.add_argument("--l1", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--min-samples-leaf", type=int, dest="min_samples_leaf")
    p.add_argument("--subsample", type=float)
    p.add_argument("--early-stopping", type=int, dest="early_stopping")


def _default_cohort() -> CohortSpec:
    with resources.as_file(resources.files("zicp.data") / "default_cohort.json") as p:
        return load_spec(p)


def _load_cohort(eff: dict) -> CohortSpec:
    spec = load_spec(eff["spec"]) if eff.get("spec") else _default_cohort()
    if eff.get("seed") is not None or os.environ.get("ZICP_SEED"):
        spec = replace(spec, seed=_resolve_seed(eff.get("seed")))
    return spec


def _build_parser() -> _Parser:
    top = _Parser(prog="zicp", description="two-stage conformal dose-change forecasting")
    top.add_argument("--version", action="version", version=f"zicp {__version__}")
    sub = top.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("datagen", help="generate a synthetic cohort CSV")
    p.add_argument("--spec", help="cohort spec JSON (bundled default if omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")

    p = sub.add_parser("ledd", help="visits extract -> supervised samples CSV")
    p.add_argument("--visits", required=True)
    p.add_argument("--factors", help="conversion factor CSV (bundled table if omitted)")
    p.add_argument("--demographics", help="CSV with patient_id,age_years,sex")
    p.add_argument("--horizon", choices=HORIZONS)
    p.add_argument("--slack-days", type=int, dest="slack_days")
    p.add_argument("--out", required=True)
    p.add_argument("--config")

    p = sub.add_parser("train", help="fit a boosted-tree model")
    p.add_argument("--data", required=True, help="samples CSV")
    p.add_argument("--task", choices=("classify", "regress"), required=True)
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    _add_learner_flags(p)

    p = sub.add_parser("conformal", help="fit a conformal regressor on a samples CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--alpha", type=float)
    p.add_argument("--nonzero-only", action="store_true", dest="nonzero_only", default=None)
    p.add_argument("--K", type=int, dest="K")
    p.add_argument("--B", type=int, dest="B")
    p.add_argument("--out", required=True, help="conformal model JSON path")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    _add_learner_flags(p)

    p = sub.add_parser("sweep", help="cutoff-grid sweep on the test partition")
    p.add_argument("--data", required=True)
    p.add_argument("--method", help="comma-separated conformal methods")
    p.add_argument("--alpha", type=float)
    p.add_argument("--grid", help="start:stop:step or comma list")
    p.add_argument("--mode", choices=CUTOFF_MODES, dest="mode")
    p.add_argument("--gamma-formula", choices=GAMMA_FORMULAS, dest="gamma_formula")
    p.add_argument("--K", type=int, dest="K")
    p.add_argument("--B", type=int, dest="B")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    _add_learner_flags(p)

    p = sub.add_parser("evaluate", help="one-cutoff evaluation summary")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--alpha", type=float)
    p.add_argument("--cutoff", type=float)
    p.add_argument("--mode", choices=CUTOFF_MODES, dest="mode")
    p.add_argument("--gamma-formula", choices=GAMMA_FORMULAS, dest="gamma_formula")
    p.add_argument("--K", type=int, dest="K")
    p.add_argument("--B", type=int, dest="B")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    _add_learner_flags(p)

    p = sub.add_parser("report", help="full horizon x method x cutoff report")
    p.add_argument("--spec", help="cohort spec JSON (bundled default if omitted)")
    p.add_argument("--horizons", help="comma list, e.g. 6M,1Y,2Y,4Y")
    p.add_argument("--methods", help="comma-separated conformal methods")
    p.add_argument("--alpha", type=float)
    p.add_argument("--grid")
    p.add_argument("--mode", choices=CUTOFF_MODES, dest="mode")
    p.add_argument("--gamma-formula", choices=GAMMA_FORMULAS, dest="gamma_formula")
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.add_argument("--jobs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    _add_learner_flags(p)

    p = sub.add_parser("significance", help="paired two-stage vs single-stage runs")
    p.add_argument("--spec", help="cohort spec JSON (bundled default if omitted)")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--alpha", type=float)
    p.add_argument("--cutoff", type=float)
    p.add_argument("--n-runs", type=int, dest="n_runs")
    p.add_argument("--gamma-formula", choices=GAMMA_FORMULAS, dest="gamma_formula")
    p.add_argument("--out", required=True)
    p.add_argument("--runs-out", dest="runs_out", help="optional per-run measurements CSV")
    p.add_argument("--jobs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    _add_learner_flags(p)

    return top


def _cmd_datagen(args: argparse.Namespace) -> int:
    eff = _merge(args, {"spec": None, "out": None, "seed": None})
    spec = _load_cohort(eff)
    rc = RunConfig(
        command="datagen",
        inputs=(eff["spec"],) if eff["spec"] else (),
        outputs=(eff["out"],),
        seed=spec.seed,
        extras={"cohort": json.loads(json.dumps(spec.__dict__, default=str))},
    )
    rc.validate_paths()
    samples, _ = generate(spec)
    write_samples(samples, eff["out"], FEATURE_NAMES, rc.header())
    print(f"wrote {len(samples)} samples to {eff['out']}")
    return 0


def _load_demographics(path: str) -> dict[str, Demographics]:
    out: dict[str, Demographics] = {}
    import csv as _csv

    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        header = None
        for row in reader:
            if not row or row[0].startswith("#"):
                continue
            if header is None:
                header = row
                if header != ["patient_id", "age_years", "sex"]:
                    raise DataError(f"{path}: malformed header {header!r}")
                continue
            if len(row) != 3:
                raise DataError(f"{path}: bad row {row!r}")
            pid, age_s, sex_s = row
            sex = sex_s.strip().lower()
            if sex not in SEX_CODES:
                raise DataError(f"{path}: unknown sex {sex_s!r}")
            try:
                age = float(age_s)
            except ValueError as exc:
                raise DataError(f"{path}: bad age {age_s!r}") from exc
            out[pid] = Demographics(age_years=age, sex_code=SEX_CODES[sex])
    return out


def _cmd_ledd(args: argparse.Namespace) -> int:
    eff = _merge(
        args,
        {"visits": None, "factors": None, "demographics": None, "horizon": "6M",
         "slack_days": 90, "out": None},
    )
    inputs = [eff["visits"]]
    if eff["factors"]:
        inputs.append(eff["factors"])
    if eff["demographics"]:
        inputs.append(eff["demographics"])
    rc = RunConfig(
        command="ledd",
        inputs=tuple(inputs),
        outputs=(eff["out"],),
        horizons=(eff["horizon"],),
        extras={"slack_days": eff["slack_days"]},
    )
    rc.validate_paths()
    table = ConversionTable.from_csv(eff["factors"]) if eff["factors"] else ConversionTable.default()
    result = load_visits(eff["visits"], table)
    for line_no, reason in result.rejected:
        print(f"{eff['visits']}:{line_no}: skipped ({reason})", file=sys.stderr)
    demo = _load_demographics(eff["demographics"]) if eff["demographics"] else {}
    config = FeatureConfig.from_visits(result.records, demographics=demo, slack_days=int(eff["slack_days"]))
    series = ledd_series(result.records, table)
    samples = build_supervised(series, eff["horizon"], config)
    write_samples(samples, eff["out"], FEATURE_NAMES, rc.header())
    print(
        f"wrote {len(samples)} samples to {eff['out']} "
        f"({len(result.records)} visit rows kept, {len(result.rejected)} rejected)"
    )
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    eff = _merge(args, {"data": None, "task": None, "out": None, "seed": None, **_LEARNER_DEFAULTS})
    seed = _resolve_seed(eff["seed"])
    params = _learner_params({**eff, "seed": seed})
    rc = RunConfig(
        command="train", inputs=(eff["data"],), outputs=(eff["out"],),
        seed=seed, learner=params, extras={"task": eff["task"]},
    )
    rc.validate_paths()
    samples, _ = load_samples(eff["data"])
    if not samples:
        raise DataError(f"{eff['data']}: no samples")
    X = feature_matrix(samples)
    y = target_vector(samples)
    if eff["task"] == "classify":
        labels = (np.abs(y) >= ZERO_TOL).astype(np.float64)
        model = fit_classifier(X, labels, params)
        auc, sens, spec = classification_metrics(model.predict_proba(X), labels.astype(int))
        note = f"train AUC {auc:.3f} sensitivity {sens:.3f} specificity {spec:.3f}"
    else:
        nz = np.abs(y) >= ZERO_TOL
        if int(nz.sum()) < 2:
            raise DataError("nothing to regress: fewer than 2 nonzero targets")
        model = fit_regressor(X[nz], y[nz], params)
        rmse, mae, r2 = regression_metrics(model.predict_value(X[nz]), y[nz])
        note = f"train RMSE {rmse:.4f} MAE {mae:.4f} R2 {r2:.4f}"
    save_model(model, eff["out"])
    print(f"saved {eff['task']} model to {eff['out']} ({note})")
    return 0


def _cmd_conformal(args: argparse.Namespace) -> int:
    eff = _merge(
        args,
        {"data": None, "method": "cvplus", "alpha": 0.2, "nonzero_only": False,
         "K": 5, "B": 50, "out": None, "seed": None, **_LEARNER_DEFAULTS},
    )
    seed = _resolve_seed(eff["seed"])
    params = _learner_params({**eff, "seed": seed})
    rc = RunConfig(
        command="conformal", inputs=(eff["data"],), outputs=(eff["out"],),
        alpha=float(eff["alpha"]), methods=(eff["method"],), seed=seed, learner=params,
        extras={"nonzero_only": bool(eff["nonzero_only"]), "K": int(eff["K"]), "B": int(eff["B"])},
    )
    rc.validate_paths()
    samples, _ = load_samples(eff["data"])
    X = feature_matrix(samples)
    y = target_vector(samples)
    if eff["nonzero_only"]:
        keep = np.abs(y) >= ZERO_TOL
        X, y = X[keep], y[keep]
    if X.shape[0] < 4:
        raise DataError("too few samples for conformal fitting")
    alpha = float(eff["alpha"])
    method = eff["method"]
    if method == "naive":
        model = fit_naive(X, y, params, alpha)
    elif method == "split":
        split = make_split(X.shape[0], seed=child_seed(seed, "cli-split"))
        cal = np.sort(np.concatenate([split.cal1, split.val, split.test]))
        model = fit_split(X, y, (split.train, cal), params, alpha)
    elif method in ("cvplus", "cvplus_foldagg"):
        variant = "canonical" if method == "cvplus" else "foldagg"
        model = fit_cvplus(X, y, params, alpha, K=int(eff["K"]), variant=variant)
    elif method == "jab":
        model = fit_jab(X, y, params, alpha, B=int(eff["B"]))
    else:
        model = fit_jackknife_plus(X, y, params, alpha)
    save_conformal(model, eff["out"])
    print(f"saved {method} conformal model (alpha={alpha}) to {eff['out']}")
    return 0


_SWEEP_COLUMNS = [
    "r", "mode", "method", "alpha", "coverage", "mean_length", "rmse",
    "n_abstained", "n_predicted_change", "beta_hat", "gamma",
]


def _cmd_sweep(args: argparse.Namespace) -> int:
    eff = _merge(
        args,
        {"data": None, "method": "cvplus", "alpha": 0.2, "grid": "0:0.95:0.05",
         "mode": "absolute", "gamma_formula": "paper_eq6", "K": 5, "B": 50,
         "out": None, "seed": None, **_LIGHT_LEARNER},
    )
    seed = _resolve_seed(eff["seed"])
    params = _learner_params({**eff, "seed": seed})
    grid = _parse_grid(eff["grid"]) if isinstance(eff["grid"], str) else tuple(eff["grid"])
    methods = _parse_list(eff["method"], METHODS, "method") if isinstance(eff["method"], str) else tuple(eff["method"])
    rc = RunConfig(
        command="sweep", inputs=(eff["data"],), outputs=(eff["out"],),
        alpha=float(eff["alpha"]), methods=methods, grid=grid,
        gamma_formula=eff["gamma_formula"], cutoff_mode=eff["mode"],
        seed=seed, learner=params, extras={"K": int(eff["K"]), "B": int(eff["B"])},
    )
    rc.validate_paths()
    samples, _ = load_samples(eff["data"])
    split = make_split(len(samples), seed=child_seed(seed, "cli-split"))
    alpha = float(eff["alpha"])

    header = rc.header()
    all_rows = []
    for method in methods:
        cfg = TwoStageConfig(params, params, method, eff["mode"], eff["gamma_formula"], int(eff["K"]), int(eff["B"]))
        comp = fit_components(samples, split, cfg, alpha)
        rows, best, feasible = sweep_from_components(comp, samples, split, cfg, grid, alpha)
        header.append(
            f"selected method={method} r={rows[best].r} feasible={'yes' if feasible else 'no'}"
        )
        all_rows.extend(rows)
    write_csv(
        eff["out"],
        _SWEEP_COLUMNS,
        [
            (row.r, row.mode, row.method, row.alpha, row.coverage, row.mean_length, row.rmse,
             row.n_abstained, row.n_predicted_change, row.beta_hat, row.gamma)
            for row in all_rows
        ],
        header,
    )
    print(f"wrote {len(all_rows)} sweep rows ({len(methods)} methods x {len(grid)} cutoffs) to {eff['out']}")
    return 0


_EVAL_COLUMNS = [
    "method", "cutoff", "horizon", "coverage", "mean_length", "calibration_error",
    "rmse", "mae", "r2", "auc", "sensitivity", "specificity", "n_test",
]


def _cmd_evaluate(args: argparse.Namespace) -> int:
    eff = _merge(
        args,
        {"data": None, "method": "cvplus", "alpha": 0.2, "cutoff": 0.5,
         "mode": "absolute", "gamma_formula": "paper_eq6", "K": 5, "B": 50,
         "out": None, "seed": None, **_LIGHT_LEARNER},
    )
    seed = _resolve_seed(eff["seed"])
    params = _learner_params({**eff, "seed": seed})
    rc = RunConfig(
        command="evaluate", inputs=(eff["data"],), outputs=(eff["out"],),
        alpha=float(eff["alpha"]), methods=(eff["method"],),
        grid=(float(eff["cutoff"]),), gamma_formula=eff["gamma_formula"],
        cutoff_mode=eff["mode"], seed=seed, learner=params,
    )
    rc.validate_paths()
    samples, _ = load_samples(eff["data"])
    split = make_split(len(samples), seed=child_seed(seed, "cli-split"))
    alpha = float(eff["alpha"])
    cfg = TwoStageConfig(params, params, eff["method"], eff["mode"], eff["gamma_formula"], int(eff["K"]), int(eff["B"]))
    comp = fit_components(samples, split, cfg, alpha)
    rows, _, _ = sweep_from_components(comp, samples, split, cfg, (float(eff["cutoff"]),), alpha)
    row = rows[0]

    X = feature_matrix(samples)
    y = target_vector(samples)
    labels = (np.abs(y) >= ZERO_TOL).astype(np.float64)
    probs_test = np.atleast_1d(comp.classifier.predict_proba(X[split.test]))
    try:
        auc, sens, spec = classification_metrics(probs_test, labels[split.test].astype(int))
    except ValueError:
        auc = sens = spec = float("nan")
    live = probs_test > select_cutoff(comp.probs_cal1, row.r, eff["mode"])
    if live.any():
        from .conformal import point_predictions

        point = np.atleast_1d(point_predictions(comp.conformal, X[split.test]))
        _, mae, r2 = regression_metrics(point[live], y[split.test][live])
    else:
        mae = r2 = float("nan")
    horizon = samples[0].horizon if samples else ""
    write_csv(
        eff["out"],
        _EVAL_COLUMNS,
        [(row.method, row.r, horizon, row.coverage, row.mean_length,
          calibration_error(row.coverage, alpha), row.rmse, mae, r2, auc, sens, spec,
          len(split.test))],
        rc.header(),
    )
    print(
        f"{row.method} cutoff={row.r}: coverage {row.coverage:.3f}, "
        f"mean length {row.mean_length:.3f} -> {eff['out']}"
    )
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    eff = _merge(
        args,
        {"spec": None, "horizons": "6M,1Y,2Y,4Y", "methods": ",".join(REPORT_METHODS),
         "alpha": 0.2, "grid": "0:0.95:0.05", "mode": "absolute",
         "gamma_formula": "paper_eq6", "out_dir": None, "jobs": None, "seed": None,
         **_LIGHT_LEARNER},
    )
    seed = _resolve_seed(eff["seed"])
    params = _learner_params({**eff, "seed": seed})
    horizons = _parse_list(eff["horizons"], HORIZONS, "horizon") if isinstance(eff["horizons"], str) else tuple(eff["horizons"])
    methods = _parse_list(eff["methods"], METHODS, "method") if isinstance(eff["methods"], str) else tuple(eff["methods"])
    grid = _parse_grid(eff["grid"]) if isinstance(eff["grid"], str) else tuple(eff["grid"])
    jobs = int(eff["jobs"]) if eff["jobs"] is not None else (os.cpu_count() or 1)
    cohort = _load_cohort(eff)
    rc = RunConfig(
        command="report", inputs=(eff["spec"],) if eff["spec"] else (),
        outputs=(eff["out_dir"],), alpha=float(eff["alpha"]), methods=methods,
        grid=grid, horizons=horizons, gamma_formula=eff["gamma_formula"],
        cutoff_mode=eff["mode"], seed=seed, learner=params,
    )
    rc.validate_paths()
    config = ReportConfig(
        cohort=cohort, horizons=horizons, methods=methods, cutoffs=grid,
        alpha=float(eff["alpha"]), mode=eff["mode"], gamma_formula=eff["gamma_formula"],
        clf_params=params, reg_params=params, seed=seed,
    )
    summaries = horizon_report(config, jobs=jobs, out_dir=eff["out_dir"], header=rc.header())
    print(f"wrote report for {len(summaries)} cells to {eff['out_dir']}")
    return 0


def _cmd_significance(args: argparse.Namespace) -> int:
    eff = _merge(
        args,
        {"spec": None, "method": "cvplus", "alpha": 0.2, "cutoff": 0.5, "n_runs": 15,
         "gamma_formula": "coverage_decomposition", "out": None, "runs_out": None,
         "jobs": 1, "seed": None, **_LIGHT_LEARNER},
    )
    seed = _resolve_seed(eff["seed"])
    params = _learner_params({**eff, "seed": seed})
    cohort = load_spec(eff["spec"]) if eff.get("spec") else _default_cohort()
    rc = RunConfig(
        command="significance", inputs=(eff["spec"],) if eff["spec"] else (),
        outputs=tuple(p for p in (eff["out"], eff["runs_out"]) if p),
        alpha=float(eff["alpha"]), methods=(eff["method"],),
        grid=(float(eff["cutoff"]),), gamma_formula=eff["gamma_formula"],
        seed=seed, learner=params, extras={"n_runs": int(eff["n_runs"])},
    )
    rc.validate_paths()
    cfg = TwoStageConfig(params, params, eff["method"], "absolute", eff["gamma_formula"])
    runs = paired_method_runs(
        cohort, cfg, n_runs=int(eff["n_runs"]), alpha=float(eff["alpha"]),
        cutoff=float(eff["cutoff"]), seed=seed, jobs=int(eff["jobs"]),
    )
    reports = significance_from_runs(runs, seed=seed)
    header = rc.header()
    header.append("run i cohort seed = child_seed(seed, 'paired-run-cohort', i)")
    write_significance(reports, eff["out"], header)
    if eff["runs_out"]:
        write_csv(
            eff["runs_out"],
            ["run", "two_stage_length", "single_length", "two_stage_marginal_coverage",
             "two_stage_coverage", "single_coverage"],
            [(r.seed_index, r.two_stage_length, r.single_length,
              r.two_stage_marginal_coverage, r.two_stage_coverage, r.single_coverage)
             for r in runs],
            header,
        )
    for rep in reports:
        print(
            f"{rep.comparison}: t={rep.t_statistic:.3f} p={rep.p_value:.4g} "
            f"d={rep.cohens_d:.3f} ci=[{rep.ci_low:.4f}, {rep.ci_high:.4f}]"
        )
    return 0


_HANDLERS = {
    "datagen": _cmd_datagen,
    "ledd": _cmd_ledd,
    "train": _cmd_train,
    "conformal": _cmd_conformal,
    "sweep": _cmd_sweep,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
    "significance": _cmd_significance,
}


def run(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"zicp: error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _HANDLERS[args.command](args)
    except UsageError as exc:
        print(f"zicp {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"zicp {args.command}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))
