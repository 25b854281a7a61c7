"""Report generation: horizon tables, frontier data, SVG scatter, significance runs.

All CSV and SVG output is plain deterministic text so a re-run under the
same configuration and seed is byte-identical. The frontier and calibration
CSVs and the per-horizon scatter plots describe one horizon at a time; the
horizon table covers the full grid.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .cohort import CohortSpec, generate
from .conformal import (
    fit_cvplus,
    fit_jab,
    fit_jackknife_plus,
    fit_naive,
    fit_split,
    interval_bounds,
    point_predictions,
)
from .gbt import GbtParams, fit_classifier, predict_proba
from .metrics import (
    EvaluationSummary,
    SignificanceReport,
    bootstrap_ci,
    calibration_error,
    classification_metrics,
    paired_t_test,
    regression_metrics,
)
from .records import HORIZONS, ZERO_TOL, feature_matrix, make_split, target_vector
from .seeding import child_seed
from .two_stage import (
    DEFAULT_GRID,
    TwoStageConfig,
    fit_components,
    select_cutoff,
    sweep_from_components,
)

REPORT_METHODS = ("naive", "split", "cvplus", "jab")

# lighter than the training defaults so a full 4-horizon report stays fast
REPORT_GBT = GbtParams(max_depth=3, n_rounds=150)


@dataclass(frozen=True)
class ReportConfig:
    cohort: CohortSpec
    horizons: tuple[str, ...] = HORIZONS
    methods: tuple[str, ...] = REPORT_METHODS
    cutoffs: tuple[float, ...] = DEFAULT_GRID
    alpha: float = 0.2
    mode: str = "absolute"
    gamma_formula: str = "paper_eq6"
    clf_params: GbtParams = field(default=REPORT_GBT)
    reg_params: GbtParams = field(default=REPORT_GBT)
    K: int = 5
    B: int = 50
    seed: int = 0


def _horizon_cell(config: ReportConfig, horizon: str) -> list[EvaluationSummary]:
    """All (method, cutoff) summaries for one horizon dataset."""
    samples, _ = generate(replace(config.cohort, horizon=horizon))
    split = make_split(
        len(samples), seed=child_seed(config.seed, "report-split", HORIZONS.index(horizon))
    )
    X = feature_matrix(samples)
    y = target_vector(samples)
    labels = (np.abs(y) >= ZERO_TOL).astype(np.float64)
    classifier = fit_classifier(X[split.train], labels[split.train], config.clf_params)
    probs_test = np.atleast_1d(predict_proba(classifier, X[split.test]))
    y_test = y[split.test]
    try:
        auc, sens, spec = classification_metrics(probs_test, labels[split.test].astype(int))
    except ValueError:
        auc = sens = spec = float("nan")

    out: list[EvaluationSummary] = []
    for method in config.methods:
        ts_cfg = TwoStageConfig(
            config.clf_params, config.reg_params, method,
            config.mode, config.gamma_formula, config.K, config.B,
        )
        comp = fit_components(samples, split, ts_cfg, config.alpha, classifier=classifier)
        rows, _, _ = sweep_from_components(comp, samples, split, ts_cfg, config.cutoffs, config.alpha)
        point = np.atleast_1d(point_predictions(comp.conformal, X[split.test]))
        for row in rows:
            live = probs_test > select_cutoff(comp.probs_cal1, row.r, config.mode)
            if live.any():
                _, mae, r2 = regression_metrics(point[live], y_test[live])
            else:
                mae = r2 = float("nan")
            out.append(
                EvaluationSummary(
                    method=method,
                    cutoff=row.r,
                    horizon=horizon,
                    coverage=row.coverage,
                    mean_length=row.mean_length,
                    calibration_error=calibration_error(row.coverage, config.alpha),
                    rmse=row.rmse,
                    mae=mae,
                    r2=r2,
                    auc=auc,
                    sensitivity=sens,
                    specificity=spec,
                    n_test=len(split.test),
                )
            )
    return out


def horizon_report(
    config: ReportConfig, jobs: int = 1, out_dir: str | Path | None = None,
    header: Sequence[str] = (),
) -> list[EvaluationSummary]:
    """Summaries over horizons x methods x cutoffs; optionally writes report files.

    Cells run in parallel across horizons when jobs > 1; every cell derives
    its own seeds, so the output does not depend on scheduling. A horizon
    whose dataset cannot be built is skipped with a warning.
    """
    results: dict[str, list[EvaluationSummary]] = {}
    if jobs > 1 and len(config.horizons) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {h: pool.submit(_horizon_cell, config, h) for h in config.horizons}
            for h in config.horizons:
                try:
                    results[h] = futures[h].result()
                except Exception as exc:
                    warnings.warn(f"horizon {h} skipped: {exc}")
    else:
        for h in config.horizons:
            try:
                results[h] = _horizon_cell(config, h)
            except Exception as exc:
                warnings.warn(f"horizon {h} skipped: {exc}")
    summaries = [s for h in config.horizons if h in results for s in results[h]]
    if out_dir is not None:
        write_report_files(summaries, config, out_dir, header)
    return summaries


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: str | Path, columns: Sequence[str], rows: Sequence[Sequence], header: Sequence[str] = ()) -> None:
    lines = [f"# {h}" for h in header]
    lines.append(",".join(columns))
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def write_table3(summaries: Sequence[EvaluationSummary], path: str | Path, header: Sequence[str] = ()) -> None:
    """Horizon x cutoff table; RMSE comes from the first method's point model."""
    methods = list(dict.fromkeys(s.method for s in summaries))
    cells: dict[tuple[str, float], dict[str, EvaluationSummary]] = {}
    for s in summaries:
        cells.setdefault((s.horizon, s.cutoff), {})[s.method] = s
    columns = ["Time", "Cutoff", "RMSE"]
    for m in methods:
        columns += [f"{m}_coverage", f"{m}_length"]
    rows = []
    for (horizon, cutoff), per_method in cells.items():
        first = per_method[methods[0]] if methods[0] in per_method else next(iter(per_method.values()))
        row = [horizon, cutoff, first.rmse]
        for m in methods:
            s = per_method.get(m)
            row += [s.coverage if s else None, s.mean_length if s else None]
        rows.append(row)
    write_csv(path, columns, rows, header)


def write_frontier(summaries: Sequence[EvaluationSummary], path: str | Path, header: Sequence[str] = ()) -> None:
    rows = [(s.method, s.cutoff, s.coverage, s.mean_length) for s in summaries]
    write_csv(path, ["method", "cutoff", "coverage", "length"], rows, header)


def write_calibration(summaries: Sequence[EvaluationSummary], path: str | Path, header: Sequence[str] = ()) -> None:
    rows = [(s.method, s.cutoff, s.calibration_error) for s in summaries]
    write_csv(path, ["method", "cutoff", "calibration_error"], rows, header)


def write_significance(reports: Sequence[SignificanceReport], path: str | Path, header: Sequence[str] = ()) -> None:
    rows = [
        (r.comparison, r.t_statistic, r.p_value, r.cohens_d, r.ci_low, r.ci_high)
        for r in reports
    ]
    write_csv(path, ["comparison", "t", "p", "d", "ci_low", "ci_high"], rows, header)


_PALETTE = {
    "naive": "#4477aa",
    "split": "#ee6677",
    "cvplus": "#228833",
    "cvplus_foldagg": "#66ccee",
    "jackknife_plus": "#aa3377",
    "jab": "#ccbb44",
}


def coverage_length_svg(
    points: Sequence[tuple[str, float, float]], alpha: float, title: str = ""
) -> str:
    """Scatter of coverage (x) vs mean interval length (y) with the nominal line.

    Plain handwritten SVG so identical inputs give identical bytes.
    """
    w, h = 640, 440
    x0, x1, y0, y1 = 70.0, 600.0, 390.0, 50.0  # plot box; y grows upward
    max_len = max((p[2] for p in points), default=1.0)
    if not np.isfinite(max_len) or max_len <= 0:
        max_len = 1.0
    max_len *= 1.08

    def sx(cov: float) -> float:
        return x0 + (x1 - x0) * cov

    def sy(length: float) -> float:
        return y0 + (y1 - y0) * (length / max_len)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<text x="{(x0 + x1) / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{title}</text>',
        f'<line x1="{x0:.1f}" y1="{y0:.1f}" x2="{x1:.1f}" y2="{y0:.1f}" stroke="black"/>',
        f'<line x1="{x0:.1f}" y1="{y0:.1f}" x2="{x0:.1f}" y2="{y1:.1f}" stroke="black"/>',
    ]
    for i in range(6):
        cov = i / 5.0
        px = sx(cov)
        parts.append(f'<line x1="{px:.2f}" y1="{y0:.1f}" x2="{px:.2f}" y2="{y0 + 5:.1f}" stroke="black"/>')
        parts.append(
            f'<text x="{px:.2f}" y="{y0 + 20:.1f}" text-anchor="middle" font-family="sans-serif" font-size="11">{cov:.1f}</text>'
        )
        ln = max_len * i / 5.0
        py = sy(ln)
        parts.append(f'<line x1="{x0 - 5:.1f}" y1="{py:.2f}" x2="{x0:.1f}" y2="{py:.2f}" stroke="black"/>')
        parts.append(
            f'<text x="{x0 - 9:.1f}" y="{py + 4:.2f}" text-anchor="end" font-family="sans-serif" font-size="11">{ln:.2f}</text>'
        )
    parts.append(
        f'<text x="{(x0 + x1) / 2:.1f}" y="{h - 8}" text-anchor="middle" font-family="sans-serif" font-size="13">empirical coverage</text>'
    )
    parts.append(
        f'<text x="16" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 16 {(y0 + y1) / 2:.1f})">mean interval length</text>'
    )
    nominal = sx(1.0 - alpha)
    parts.append(
        f'<line x1="{nominal:.2f}" y1="{y0:.1f}" x2="{nominal:.2f}" y2="{y1:.1f}" stroke="#888888" stroke-dasharray="5,4"/>'
    )
    parts.append(
        f'<text x="{nominal:.2f}" y="{y1 - 6:.1f}" text-anchor="middle" font-family="sans-serif" font-size="11" fill="#555555">nominal {1.0 - alpha:.2f}</text>'
    )
    for method, cov, length in points:
        if not (np.isfinite(cov) and np.isfinite(length)):
            continue
        color = _PALETTE.get(method, "#777777")
        parts.append(
            f'<circle cx="{sx(cov):.2f}" cy="{sy(length):.2f}" r="4" fill="{color}" fill-opacity="0.8"/>'
        )
    legend_methods = list(dict.fromkeys(p[0] for p in points))
    for i, method in enumerate(legend_methods):
        ly = y1 + 14 + 18 * i
        color = _PALETTE.get(method, "#777777")
        parts.append(f'<rect x="{x1 - 110:.1f}" y="{ly - 9:.1f}" width="10" height="10" fill="{color}"/>')
        parts.append(
            f'<text x="{x1 - 95:.1f}" y="{ly:.1f}" font-family="sans-serif" font-size="12">{method}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_report_files(
    summaries: Sequence[EvaluationSummary],
    config: ReportConfig,
    out_dir: str | Path,
    header: Sequence[str] = (),
) -> list[Path]:
    """table3.csv plus, for the first listed horizon, frontier/calibration CSVs;
    one coverage-length SVG per horizon."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    path = out / "table3.csv"
    write_table3(summaries, path, header)
    written.append(path)

    present = [h for h in config.horizons if any(s.horizon == h for s in summaries)]
    if present:
        front = [s for s in summaries if s.horizon == present[0]]
        path = out / "frontier.csv"
        write_frontier(front, path, header)
        written.append(path)
        path = out / "calibration.csv"
        write_calibration(front, path, header)
        written.append(path)
    for h in present:
        pts = [(s.method, s.coverage, s.mean_length) for s in summaries if s.horizon == h]
        path = out / f"coverage_length_{h}.svg"
        path.write_text(coverage_length_svg(pts, config.alpha, title=f"coverage vs length ({h})"))
        written.append(path)
    return written


@dataclass(frozen=True)
class ComparisonRun:
    """Per-seed paired measurements of two-stage vs single-stage intervals."""

    seed_index: int
    two_stage_length: float
    single_length: float
    two_stage_marginal_coverage: float
    two_stage_coverage: float
    single_coverage: float


def _fit_single_stage(X, y, split, method: str, reg_params: GbtParams, alpha: float, K: int, B: int):
    """Baseline conformal regressor on all samples, zeros included."""
    pool = np.sort(np.concatenate([split.train, split.cal1, split.val]))
    if method == "naive":
        return fit_naive(X[pool], y[pool], reg_params, alpha)
    if method == "split":
        cal = np.sort(np.concatenate([split.cal1, split.val]))
        return fit_split(X, y, (split.train, cal), reg_params, alpha)
    if method in ("cvplus", "cvplus_foldagg"):
        variant = "canonical" if method == "cvplus" else "foldagg"
        return fit_cvplus(X[pool], y[pool], reg_params, alpha, K=K, variant=variant)
    if method == "jab":
        return fit_jab(X[pool], y[pool], reg_params, alpha, B=B)
    if method == "jackknife_plus":
        return fit_jackknife_plus(X[pool], y[pool], reg_params, alpha)
    raise ValueError(f"unknown conformal method {method!r}")


def _paired_run(
    cohort: CohortSpec,
    config: TwoStageConfig,
    alpha: float,
    cutoff: float,
    grid: tuple[float, ...],
    seed: int,
    index: int,
) -> ComparisonRun:
    cs = replace(cohort, seed=child_seed(seed, "paired-run-cohort", index))
    samples, _ = generate(cs)
    split = make_split(len(samples), seed=child_seed(seed, "paired-run-split", index))
    X = feature_matrix(samples)
    y = target_vector(samples)

    comp = fit_components(samples, split, config, alpha)
    rows, _, _ = sweep_from_components(comp, samples, split, config, grid, alpha)
    at_cut = min(rows, key=lambda row: abs(row.r - cutoff))
    marginal_cov = float(np.mean([row.coverage for row in rows]))

    single = _fit_single_stage(X, y, split, config.conformal_method, config.reg_params, alpha, config.K, config.B)
    lo, hi = interval_bounds(single, X[split.test])
    y_test = y[split.test]
    return ComparisonRun(
        seed_index=index,
        two_stage_length=at_cut.mean_length,
        single_length=float(np.mean(hi - lo)),
        two_stage_marginal_coverage=marginal_cov,
        two_stage_coverage=at_cut.coverage,
        single_coverage=float(np.mean((lo <= y_test) & (y_test <= hi))),
    )


def paired_method_runs(
    cohort: CohortSpec,
    config: TwoStageConfig,
    n_runs: int = 15,
    alpha: float = 0.2,
    cutoff: float = 0.5,
    grid: Sequence[float] = DEFAULT_GRID,
    seed: int = 0,
    jobs: int = 1,
) -> list[ComparisonRun]:
    """n_runs independent seeded cohorts, each fit both ways.

    Run i derives its own cohort and split seeds from (seed, i), so the
    list is identical whether runs execute serially or in parallel.
    """
    if n_runs < 2:
        raise ValueError("n_runs must be >= 2")
    grid = tuple(grid)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_paired_run, cohort, config, alpha, cutoff, grid, seed, i)
                for i in range(n_runs)
            ]
            return [f.result() for f in futures]
    return [_paired_run(cohort, config, alpha, cutoff, grid, seed, i) for i in range(n_runs)]


def significance_from_runs(runs: Sequence[ComparisonRun], seed: int = 0) -> list[SignificanceReport]:
    """Paired t-tests and bootstrap CIs for length and coverage differences."""
    ts_len = np.array([r.two_stage_length for r in runs])
    ss_len = np.array([r.single_length for r in runs])
    ts_cov = np.array([r.two_stage_marginal_coverage for r in runs])
    ss_cov = np.array([r.single_coverage for r in runs])
    out = []
    for name, a, b, idx in (
        ("two_stage_vs_single:interval_length", ts_len, ss_len, 0),
        ("two_stage_vs_single:marginal_coverage", ts_cov, ss_cov, 1),
    ):
        t, p, d = paired_t_test(a, b)
        lo, hi = bootstrap_ci(a - b, seed=child_seed(seed, "significance-ci", idx))
        out.append(SignificanceReport(name, t, p, d, lo, hi, len(runs)))
    return out
