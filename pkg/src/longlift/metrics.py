"""Decision metrics: short-term effect, long-term effect, lifetime-value delta.

STE is the naive pooled treated-minus-control difference over the opening
window. LTE is the asymptote of a decay fit to the effect trajectory.
The lifetime-value delta sums, over a truncation horizon, the fitted
treated metric times fitted treated survival minus the control product,
so it prices in both behavioral change and differential churn. Baseline
variants rebuild the same quantities from the entry-0 cohort only, the
way the single-cohort estimators extend to lifetime value. Uncertainty
comes from a within-arm user bootstrap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .decay import DecayFit, UnfittableCurve, asymptote, fit_exponential, predict
from .estimators import (
    ARM_LEVEL_C,
    ARM_LEVEL_T,
    EFFECT,
    LEARNING,
    Estimate,
    EstimatorUnavailable,
    LearningCurve,
    ccd_series,
    did_series,
    multicohort_series,
)
from .panel import (
    ARM_CONTROL,
    ARM_TREATMENT,
    MODE_METRIC,
    MODE_PRESENCE,
    CohortPanel,
    EventLog,
    as_event_log,
)

STE = "STE"
LTE = "LTE"
DERLV = "dERLV"

METHOD_MC = "MC"
METHOD_CCD = "CCD"
METHOD_DID = "DiD"
METHOD_NAIVE = "naive"
BASELINE_METHODS = (METHOD_CCD, METHOD_DID)

Z95 = 1.96

_FIT_KEYS = ("metric_T", "metric_C", "survival_T", "survival_C")
_CURVE_SPECS = {
    "metric_T": (MODE_METRIC, ARM_LEVEL_T),
    "metric_C": (MODE_METRIC, ARM_LEVEL_C),
    "survival_T": (MODE_PRESENCE, ARM_LEVEL_T),
    "survival_C": (MODE_PRESENCE, ARM_LEVEL_C),
}


class MetricUnavailable(RuntimeError):
    """A decision metric cannot be computed on this data; message says why."""


@dataclass(frozen=True)
class MetricEstimate:
    """One decision metric with its uncertainty and producing method."""

    name: str
    value: float
    std: float
    ci95: tuple[float, float]
    method: str

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "value": _json_num(self.value),
            "std": _json_num(self.std),
            "ci95": [_json_num(self.ci95[0]), _json_num(self.ci95[1])],
            "method": self.method,
        }


def _json_num(x):
    if x is None:
        return None
    x = float(x)
    return x if np.isfinite(x) else None


def _point(name: str, value: float, method: str) -> MetricEstimate:
    return MetricEstimate(name=name, value=float(value), std=float("nan"),
                          ci95=(float("nan"), float("nan")), method=method)


# ---------------------------------------------------------------------------
# short-term effect


def _ste_parts(log: EventLog, window: int, weights=None):
    if not 1 <= window <= log.T:
        raise ValueError(f"window must be in [1, {log.T}], got {window}")
    w_user = np.ones(log.n_users) if weights is None else np.asarray(weights, dtype=np.float64)
    sel = log.r_day < window
    r_user = log.r_user[sel]
    r_val = log.r_val[sel]
    r_w = w_user[r_user]

    day_w = np.bincount(r_user, weights=r_w, minlength=log.n_users)
    day_sum = np.bincount(r_user, weights=r_w * r_val, minlength=log.n_users)
    obs_count = np.bincount(r_user, minlength=log.n_users)
    with np.errstate(invalid="ignore", divide="ignore"):
        user_mean = day_sum / day_w

    out = {}
    for arm, mask in ((ARM_TREATMENT, log.treated), (ARM_CONTROL, ~log.treated)):
        users = mask & (obs_count > 0) & (w_user > 0)
        n = float(w_user[users].sum())
        if n == 0:
            raise MetricUnavailable(f"no active {arm} user-days in the first {window} days")
        pooled = float(day_sum[users].sum()) / float(day_w[users].sum())
        um = user_mean[users]
        uw = w_user[users]
        mu = float((uw * um).sum()) / n
        s2 = float((uw * (um - mu) ** 2).sum()) / (n - 1.0) if n >= 2 else float("nan")
        out[arm] = (pooled, s2, n)
    return out


def _resolve_window(window, T: int) -> int:
    # None means the first week, capped at the experiment duration
    return min(7, T) if window is None else int(window)


def estimate_ste(records, window: int | None = None) -> MetricEstimate:
    """Pooled treated-minus-control user-day mean over the opening window.

    The default window is the first week, capped at the experiment
    duration. The variance clusters at the user level: a two-sample
    formula on per-user means, so heavy users do not pseudo-replicate.
    """
    log = as_event_log(records)
    parts = _ste_parts(log, _resolve_window(window, log.T))
    (pt, s2t, nt), (pc, s2c, nc) = parts[ARM_TREATMENT], parts[ARM_CONTROL]
    value = pt - pc
    var = s2t / nt + s2c / nc
    std = float(np.sqrt(var))
    return MetricEstimate(name=STE, value=value, std=std,
                          ci95=(value - Z95 * std, value + Z95 * std), method=METHOD_NAIVE)


# ---------------------------------------------------------------------------
# long-term effect and lifetime-value delta (multi-cohort pipeline)


def _fit_curve(curve: LearningCurve, label: str) -> DecayFit:
    if not curve.fittable:
        raise MetricUnavailable(
            f"{label} curve has {len(curve.points)} usable points; "
            f"the decay fit needs {LearningCurve.MIN_FIT_POINTS}"
        )
    return fit_exponential(curve.fit_points())


def _stable_asymptote(fit: DecayFit, curve: LearningCurve) -> float:
    """Limiting value of a fit, guarded against unresolved decay.

    A fit whose rate pinned at a grid edge is flagged not converged: the
    decay time scale was not resolved inside the window, and there the
    level and amplitude trade off almost linearly, so the t -> infinity
    limit can be an arbitrarily wild extrapolation artifact. The fitted
    level at the last observed day is the stable in-window stand-in; it
    coincides with the limit whenever the decay has died out by then.
    """
    if fit.converged:
        return asymptote(fit)
    return float(predict(fit, curve.points[-1][0]))


def estimate_lte(metric_panel: CohortPanel) -> MetricEstimate:
    """Limit of the decay fit to the multi-cohort effect trajectory."""
    curve = multicohort_series(metric_panel, EFFECT)
    fit = _fit_curve(curve, "effect")
    return _point(LTE, _stable_asymptote(fit, curve), METHOD_MC)


def arm_level_curves(metric_panel: CohortPanel, presence_panel: CohortPanel) -> dict[str, LearningCurve]:
    """The four arm-level trajectories the lifetime-value sum is built from."""
    panels = {MODE_METRIC: metric_panel, MODE_PRESENCE: presence_panel}
    return {
        key: multicohort_series(panels[mode], diff_mode)
        for key, (mode, diff_mode) in _CURVE_SPECS.items()
    }


def delta_erlv_from_fits(fits: Mapping[str, DecayFit], horizon: int) -> float:
    """Sum of fitted treated product minus control product over 0..horizon.

    Survival predictions are clamped into [0, 1] before the product; the
    exponential fit can drift slightly outside the unit interval at t = 0.
    """
    ts = np.arange(0, int(horizon) + 1, dtype=np.float64)
    f_t = predict(fits["metric_T"], ts)
    f_c = predict(fits["metric_C"], ts)
    s_t = np.clip(predict(fits["survival_T"], ts), 0.0, 1.0)
    s_c = np.clip(predict(fits["survival_C"], ts), 0.0, 1.0)
    return float(np.sum(f_t * s_t - f_c * s_c))


def estimate_delta_erlv(
    metric_panel: CohortPanel, presence_panel: CohortPanel, horizon: int | None = None
) -> MetricEstimate:
    """Lifetime-value delta from the four multi-cohort arm-level fits."""
    horizon = metric_panel.T if horizon is None else int(horizon)
    curves = arm_level_curves(metric_panel, presence_panel)
    fits = {key: _fit_curve(curve, key) for key, curve in curves.items()}
    return _point(DERLV, delta_erlv_from_fits(fits, horizon), METHOD_MC)


# ---------------------------------------------------------------------------
# single-cohort baselines


def cohort0_series(panel: CohortPanel, arm: str) -> LearningCurve:
    """Arm-level trajectory read off the entry-0 cohort alone."""
    mode = ARM_LEVEL_T if arm == ARM_TREATMENT else ARM_LEVEL_C
    points = []
    for t in range(panel.T):
        cell = panel.usable(arm, 0, t)
        if cell is not None:
            points.append((t, Estimate(value=cell.mean, variance=cell.var_of_mean, k_used=(0,))))
    return LearningCurve(mode=mode, points=points)


def _baseline_fits(metric_panel: CohortPanel, presence_panel: CohortPanel) -> dict[str, DecayFit]:
    curves = {
        "metric_T": cohort0_series(metric_panel, ARM_TREATMENT),
        "metric_C": cohort0_series(metric_panel, ARM_CONTROL),
        "survival_T": cohort0_series(presence_panel, ARM_TREATMENT),
        "survival_C": cohort0_series(presence_panel, ARM_CONTROL),
    }
    return {key: _fit_curve(curve, f"entry-0 {key}") for key, curve in curves.items()}


def baseline_delta_erlv(
    records,
    method: str,
    horizon: int | None = None,
    metric_panel: CohortPanel | None = None,
    presence_panel: CohortPanel | None = None,
) -> MetricEstimate:
    """Lifetime-value delta with curves fitted on the entry-0 cohort only.

    This is how the single-cohort estimators extend to lifetime value; the
    construction is the same for both, so the method argument is a label.
    """
    if method not in BASELINE_METHODS:
        raise ValueError(f"method must be one of {BASELINE_METHODS}, got {method!r}")
    if metric_panel is None or presence_panel is None:
        log = as_event_log(records)
        metric_panel = log.aggregate(MODE_METRIC)
        presence_panel = log.aggregate(MODE_PRESENCE)
    horizon = metric_panel.T if horizon is None else int(horizon)
    fits = _baseline_fits(metric_panel, presence_panel)
    return MetricEstimate(name=DERLV, value=delta_erlv_from_fits(fits, horizon),
                          std=float("nan"), ci95=(float("nan"), float("nan")), method=method)


def baseline_lte(metric_panel: CohortPanel, method: str) -> MetricEstimate:
    """Long-term effect from a single-cohort learning curve.

    The learning fit's asymptote gives the stabilized learning shift; adding
    the first-day effect (entry-0 treated minus control means on day 0)
    yields the long-term effect.
    """
    if method == METHOD_CCD:
        curve = ccd_series(metric_panel)
    elif method == METHOD_DID:
        curve = did_series(metric_panel)
    else:
        raise ValueError(f"method must be one of {BASELINE_METHODS}, got {method!r}")
    fit = _fit_curve(curve, f"{method} learning")
    tr = metric_panel.usable(ARM_TREATMENT, 0, 0)
    co = metric_panel.usable(ARM_CONTROL, 0, 0)
    if tr is None or co is None:
        raise MetricUnavailable("entry-0 day-0 cells unusable: first-day effect undefined")
    tau = tr.mean - co.mean
    return _point(LTE, tau + _stable_asymptote(fit, curve), method)


# ---------------------------------------------------------------------------
# full pipeline and bootstrap


def point_metrics(
    log: EventLog,
    window: int | None = None,
    horizon: int | None = None,
    methods: Sequence[str] = (METHOD_MC, METHOD_CCD, METHOD_DID),
    weights=None,
    collect_curves: bool = False,
) -> dict:
    """One pass of the full pipeline; per-metric failures become diagnostics.

    Returns point values for STE and, per requested method, LTE and the
    lifetime-value delta; with ``collect_curves`` the fitted models and
    underlying curves are included for reporting.
    """
    window = _resolve_window(window, log.T)
    horizon = log.T if horizon is None else int(horizon)
    out: dict = {"ste": None, "lte": {}, "derlv": {}, "fits": {}, "curves": {}, "diagnostics": []}

    def attempt(label, fn):
        try:
            return fn()
        except (MetricUnavailable, UnfittableCurve, EstimatorUnavailable, ValueError) as exc:
            out["diagnostics"].append(f"{label}: {exc}")
            return None

    metric_panel = log.aggregate(MODE_METRIC, weights)
    presence_panel = log.aggregate(MODE_PRESENCE, weights)

    def _ste():
        parts = _ste_parts(log, window, weights)
        (pt, s2t, nt), (pc, s2c, nc) = parts[ARM_TREATMENT], parts[ARM_CONTROL]
        out["ste_var"] = s2t / nt + s2c / nc
        return pt - pc

    out["ste"] = attempt("STE", _ste)

    if METHOD_MC in methods:
        def _lte_mc():
            curve = multicohort_series(metric_panel, EFFECT)
            fit = _fit_curve(curve, "effect")
            if collect_curves:
                out["curves"]["effect"] = curve
                out["fits"]["effect"] = fit
            return _stable_asymptote(fit, curve)

        def _derlv_mc():
            curves = arm_level_curves(metric_panel, presence_panel)
            fits = {key: _fit_curve(curve, key) for key, curve in curves.items()}
            if collect_curves:
                out["curves"].update(curves)
                out["fits"].update(fits)
            return delta_erlv_from_fits(fits, horizon)

        out["lte"][METHOD_MC] = attempt("LTE[MC]", _lte_mc)
        out["derlv"][METHOD_MC] = attempt("dERLV[MC]", _derlv_mc)
        if collect_curves:
            out["curves"]["learning"] = multicohort_series(metric_panel, LEARNING)

    wanted_baselines = [m for m in BASELINE_METHODS if m in methods]
    if wanted_baselines:
        shared = attempt(
            "dERLV[entry-0]",
            lambda: delta_erlv_from_fits(_baseline_fits(metric_panel, presence_panel), horizon),
        )
        for method in wanted_baselines:
            out["lte"][method] = attempt(
                f"LTE[{method}]", lambda m=method: baseline_lte(metric_panel, m).value
            )
            out["derlv"][method] = shared
    return out


@dataclass
class AnalysisReport:
    """Full analysis output: metrics with bootstrap uncertainty plus curves."""

    ste: MetricEstimate | None
    lte: MetricEstimate | None
    derlv: MetricEstimate | None
    baselines: dict[str, dict[str, MetricEstimate | None]]
    fits: dict[str, DecayFit]
    curves: dict[str, LearningCurve]
    horizon: int
    seed: int
    n_replicates: int
    n_failures: int
    unstable: bool
    diagnostics: list[str] = field(default_factory=list)

    @property
    def effect_curve(self) -> LearningCurve | None:
        return self.curves.get("effect")

    def to_dict(self) -> dict:
        def est(m):
            return m.to_dict() if m is not None else None

        return {
            "ste": est(self.ste),
            "lte": est(self.lte),
            "derlv": est(self.derlv),
            "baselines": {
                method: {name: est(m) for name, m in by_name.items()}
                for method, by_name in self.baselines.items()
            },
            "fits": {name: fit.to_dict() for name, fit in self.fits.items()},
            "curves": {
                name: [
                    {"t": t, "value": _json_num(e.value), "variance": _json_num(e.variance)}
                    for t, e in curve.points
                ]
                for name, curve in self.curves.items()
            },
            "horizon": self.horizon,
            "seed": self.seed,
            "n_replicates": self.n_replicates,
            "n_failures": self.n_failures,
            "unstable": self.unstable,
            "diagnostics": list(self.diagnostics),
        }


def _resample_weights(log: EventLog, rng) -> np.ndarray:
    """Within-arm user resampling with replacement, as frequency counts."""
    w = np.zeros(log.n_users, dtype=np.int64)
    for arm in (ARM_CONTROL, ARM_TREATMENT):
        idx = log.arm_indices(arm)
        if idx.size:
            w[idx] = rng.multinomial(idx.size, np.full(idx.size, 1.0 / idx.size))
    return w


def bootstrap_report(
    records,
    B: int = 200,
    seed: int = 0,
    window: int | None = None,
    horizon: int | None = None,
    methods: Sequence[str] = (METHOD_MC, METHOD_CCD, METHOD_DID),
    T: int | None = None,
) -> AnalysisReport:
    """Analyze an event log with a within-arm user bootstrap.

    Point values come from the non-resampled run; each replicate resamples
    users with replacement within each arm (entry times ride along with the
    user) and reruns the pipeline. Stds are replicate standard deviations
    and the intervals are percentile intervals. Replicate streams derive
    from (seed, replicate index), so results do not depend on scheduling.
    """
    if B < 50:
        raise ValueError(f"need at least 50 bootstrap replicates, got {B}")
    log = as_event_log(records, T)
    window = _resolve_window(window, log.T)
    horizon = log.T if horizon is None else int(horizon)

    point = point_metrics(log, window=window, horizon=horizon, methods=methods, collect_curves=True)

    keys = [("ste", None)]
    keys += [("lte", m) for m in methods if m in point["lte"]]
    keys += [("derlv", m) for m in methods if m in point["derlv"]]
    live = [(k, m) for k, m in keys
            if (point[k] if m is None else point[k].get(m)) is not None]

    samples: dict = {km: [] for km in live}
    n_failures = 0
    for b in range(B):
        rng = np.random.default_rng([seed, 1, b])
        weights = _resample_weights(log, rng)
        rep = point_metrics(log, window=window, horizon=horizon, methods=methods, weights=weights)
        failed = False
        for k, m in live:
            v = rep[k] if m is None else rep[k].get(m)
            if v is None:
                failed = True
            else:
                samples[(k, m)].append(v)
        n_failures += failed

    def summarize(name, k, m, method_label):
        value = point[k] if m is None else point[k].get(m)
        if value is None:
            return None
        vals = samples.get((k, m), [])
        if len(vals) >= 2:
            arr = np.asarray(vals)
            std = float(np.std(arr, ddof=1))
            lo, hi = (float(q) for q in np.percentile(arr, [2.5, 97.5]))
        else:
            std, lo, hi = float("nan"), float("nan"), float("nan")
        return MetricEstimate(name=name, value=float(value), std=std, ci95=(lo, hi), method=method_label)

    baselines = {
        m: {"lte": summarize(LTE, "lte", m, m), "derlv": summarize(DERLV, "derlv", m, m)}
        for m in BASELINE_METHODS if m in methods
    }
    primary_missing = (
        point["ste"] is None
        or (METHOD_MC in methods and (point["lte"].get(METHOD_MC) is None
                                      or point["derlv"].get(METHOD_MC) is None))
    )
    return AnalysisReport(
        ste=summarize(STE, "ste", None, METHOD_NAIVE),
        lte=summarize(LTE, "lte", METHOD_MC, METHOD_MC) if METHOD_MC in methods else None,
        derlv=summarize(DERLV, "derlv", METHOD_MC, METHOD_MC) if METHOD_MC in methods else None,
        baselines=baselines,
        fits=point["fits"],
        curves=point["curves"],
        horizon=horizon,
        seed=int(seed),
        n_replicates=B,
        n_failures=n_failures,
        unstable=bool(primary_missing or n_failures > 0.2 * B),
        diagnostics=point["diagnostics"],
    )
