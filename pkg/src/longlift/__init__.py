"""Long-horizon treatment effect estimation for staggered-entry experiments.

The package turns a per-user event log into cohort panels, estimates how
treatment effects evolve with exposure (single-cohort comparisons and an
inverse-variance multi-cohort combination), fits decaying-exponential
trajectories, and rolls everything up into three decision metrics: the
short-term effect, the long-term effect, and the expected retained
lifetime-value delta, with bootstrap uncertainty. A simulator with
closed-form ground truth and two benchmark harnesses round it out.
"""

__version__ = "0.1.0"

from .panel import (
    ARM_CONTROL,
    ARM_TREATMENT,
    MODE_METRIC,
    MODE_PRESENCE,
    CohortCell,
    CohortPanel,
    EventLog,
    PanelError,
    UserRecord,
    as_event_log,
    build_panel,
    infer_duration,
    read_events_csv,
    write_events_csv,
    write_panel_csv,
)
from .estimators import (
    ARM_LEVEL_C,
    ARM_LEVEL_T,
    DIFF_MODES,
    EFFECT,
    LEARNING,
    Estimate,
    EstimatorUnavailable,
    LearningCurve,
    ccd_learning,
    ccd_series,
    delta_k,
    did_learning,
    did_series,
    inverse_variance_weights,
    mean_ci95_width,
    multicohort_estimate,
    multicohort_series,
    write_curves_csv,
)
from .decay import DecayFit, UnfittableCurve, asymptote, fit_exponential, predict
from .metrics import (
    AnalysisReport,
    MetricEstimate,
    MetricUnavailable,
    baseline_delta_erlv,
    baseline_lte,
    bootstrap_report,
    estimate_delta_erlv,
    estimate_lte,
    estimate_ste,
)
from .simulate import (
    SimConfig,
    churn_factor,
    control_survival,
    generate,
    treated_survival,
    true_delta_erlv,
    true_lte,
)
from .bench import (
    BenchReport,
    BenchSpec,
    ParamDist,
    run_bench,
    run_scenario2,
    run_table1,
    scenario2_spec,
    table1_spec,
)

__all__ = [
    "__version__",
    # panel
    "ARM_CONTROL", "ARM_TREATMENT", "MODE_METRIC", "MODE_PRESENCE",
    "CohortCell", "CohortPanel", "EventLog", "PanelError", "UserRecord",
    "as_event_log", "build_panel", "infer_duration", "read_events_csv", "write_events_csv",
    "write_panel_csv",
    # estimators
    "ARM_LEVEL_C", "ARM_LEVEL_T", "DIFF_MODES", "EFFECT", "LEARNING",
    "Estimate", "EstimatorUnavailable", "LearningCurve",
    "ccd_learning", "ccd_series", "delta_k", "did_learning", "did_series",
    "inverse_variance_weights", "mean_ci95_width", "multicohort_estimate",
    "multicohort_series", "write_curves_csv",
    # decay
    "DecayFit", "UnfittableCurve", "asymptote", "fit_exponential", "predict",
    # metrics
    "AnalysisReport", "MetricEstimate", "MetricUnavailable",
    "baseline_delta_erlv", "baseline_lte", "bootstrap_report",
    "estimate_delta_erlv", "estimate_lte", "estimate_ste",
    # simulate
    "SimConfig", "churn_factor", "control_survival", "generate",
    "treated_survival", "true_delta_erlv", "true_lte",
    # bench
    "BenchReport", "BenchSpec", "ParamDist", "run_bench", "run_scenario2",
    "run_table1", "scenario2_spec", "table1_spec",
]
