"""Two-stage conformal prediction for zero-inflated dose-change forecasting."""

__version__ = "0.1.0"

from .cohort import (
    CohortSpec,
    GroundTruth,
    generate,
    load_spec,
    oracle_interval,
    save_spec,
)
from .conformal import (
    METHODS,
    ConformalModel,
    PredictionInterval,
    conformal_quantile,
    fit_cvplus,
    fit_jab,
    fit_jackknife_plus,
    fit_naive,
    fit_split,
    interval_bounds,
    load_conformal,
    point_predictions,
    predict_interval,
    save_conformal,
)
from .gbt import (
    GbtModel,
    GbtParams,
    Tree,
    fit_classifier,
    fit_regressor,
    grid_search,
    load_model,
    predict_proba,
    predict_value,
    save_model,
)
from .ledd import (
    FEATURE_NAMES,
    ConversionTable,
    Demographics,
    FeatureConfig,
    LeddSeries,
    build_supervised,
    convert_to_ledd,
    ledd_series,
    pct_change,
    signed_log,
    winsorize,
)
from .metrics import (
    EvaluationSummary,
    SignificanceReport,
    bootstrap_ci,
    calibration_error,
    classification_metrics,
    cohens_d,
    coverage,
    mann_whitney_auc,
    marginal,
    mean_length,
    paired_t_test,
    permutation_importance,
    regression_metrics,
)
from .records import (
    HORIZON_DAYS,
    HORIZONS,
    ZERO_TOL,
    DataError,
    DatasetSplit,
    SupervisedSample,
    VisitRecord,
    load_samples,
    load_visits,
    make_split,
    write_samples,
)
from .reports import (
    ComparisonRun,
    ReportConfig,
    coverage_length_svg,
    horizon_report,
    paired_method_runs,
    significance_from_runs,
)
from .seeding import child_seed, rng
from .two_stage import (
    CUTOFF_MODES,
    DEFAULT_GRID,
    GAMMA_FORMULAS,
    NO_ABSTENTIONS,
    SweepRow,
    TwoStageConfig,
    TwoStageModel,
    compute_gamma,
    estimate_beta,
    fit_two_stage,
    predict_two_stage,
    select_cutoff,
    sweep_r,
    two_stage_bounds,
)
