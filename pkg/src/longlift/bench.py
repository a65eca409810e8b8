"""Benchmark harnesses: estimator comparison and a decision-style scenario.

Two canned experiments. The comparison sweep draws experiment parameters
from ranges, simulates, and scores every estimator on confidence width
and absolute error against ground truth. The decision scenario holds the
design fixed, draws effect and churn magnitudes from normals (negative
draws are kept; they are part of the story), and reports the three
decision metrics with bootstrap intervals plus mean fitted trajectories.

Every simulation gets its own seed substream, so results are independent
of worker count and scheduling; reports contain no volatile fields and
serialize byte-identically across runs.
"""

from __future__ import annotations

import csv
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from .estimators import LEARNING, ccd_series, did_series, mean_ci95_width, multicohort_series
from .metrics import (
    DERLV,
    LTE,
    METHOD_CCD,
    METHOD_DID,
    METHOD_MC,
    MetricUnavailable,
    baseline_lte,
    bootstrap_report,
    delta_erlv_from_fits,
    _baseline_fits,
    estimate_delta_erlv,
    estimate_lte,
)
from .panel import MODE_METRIC, MODE_PRESENCE, EventLog
from .simulate import SimConfig, generate, true_delta_erlv, true_lte

TABLE1 = "table1"
SCENARIO2 = "scenario2"
EXPERIMENTS = (TABLE1, SCENARIO2)

_DIST_KINDS = ("fixed", "uniform", "uniform_int", "normal")


@dataclass(frozen=True)
class ParamDist:
    """A scalar sampling rule: fixed value, uniform range, or normal."""

    kind: str
    a: float
    b: float = 0.0

    def __post_init__(self):
        if self.kind not in _DIST_KINDS:
            raise ValueError(f"kind must be one of {_DIST_KINDS}, got {self.kind!r}")

    def draw(self, rng) -> float:
        if self.kind == "fixed":
            return self.a
        if self.kind == "uniform":
            return float(rng.uniform(self.a, self.b))
        if self.kind == "uniform_int":
            return int(rng.integers(int(self.a), int(self.b) + 1))
        return float(rng.normal(self.a, self.b))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "b": self.b}

    @classmethod
    def from_dict(cls, data) -> "ParamDist":
        if isinstance(data, (int, float)):
            return cls("fixed", float(data))
        return cls(**data)


@dataclass(frozen=True)
class BenchSpec:
    """Everything that determines a benchmark run, including all randomness."""

    experiment: str
    n_sims: int = 100
    n_users: int = 10_000
    seed: int = 0
    methods: tuple[str, ...] = (METHOD_CCD, METHOD_DID, METHOD_MC)
    bootstrap: int = 0
    window: int = 7
    horizon: int | None = None
    params: dict[str, ParamDist] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "n_sims": self.n_sims,
            "n_users": self.n_users,
            "seed": self.seed,
            "methods": list(self.methods),
            "bootstrap": self.bootstrap,
            "window": self.window,
            "horizon": self.horizon,
            "params": {name: dist.to_dict() for name, dist in self.params.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BenchSpec":
        data = dict(data)
        if data.get("experiment") not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}, got {data.get('experiment')!r}")
        params = {name: ParamDist.from_dict(d) for name, d in data.pop("params", {}).items()}
        methods = tuple(data.pop("methods", (METHOD_CCD, METHOD_DID, METHOD_MC)))
        known = set(cls.__dataclass_fields__) - {"params", "methods"}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown bench spec keys: {sorted(extra)}")
        return cls(params=params, methods=methods, **data)


def table1_spec(n_sims: int = 100, n_users: int = 10_000, seed: int = 0) -> BenchSpec:
    """Estimator comparison sweep: short designs, decaying effects, mild churn."""
    return BenchSpec(
        experiment=TABLE1,
        n_sims=n_sims,
        n_users=n_users,
        seed=seed,
        params={
            "T": ParamDist("uniform_int", 7, 14),
            "alpha_eff": ParamDist("uniform", 0.05, 0.2),
            "beta_eff": ParamDist("uniform", 0.1, 0.5),
            "alpha_churn": ParamDist("uniform", 0.0, 0.1),
            "beta_churn": ParamDist("uniform", 0.05, 0.3),
        },
    )


def scenario2_spec(n_sims: int = 100, n_users: int = 10_000, seed: int = 0,
                   bootstrap: int = 120) -> BenchSpec:
    """Novelty-plus-churn scenario: positive short-term pop, negative value."""
    return BenchSpec(
        experiment=SCENARIO2,
        n_sims=n_sims,
        n_users=n_users,
        seed=seed,
        methods=(METHOD_MC,),
        bootstrap=bootstrap,
        params={
            "T": ParamDist("fixed", 14),
            "alpha_eff": ParamDist("normal", 0.1, 0.07),
            "beta_eff": ParamDist("fixed", 1.0 / 3.0),
            "alpha_churn": ParamDist("normal", 0.2, 0.07),
            "beta_churn": ParamDist("fixed", 1.0 / 3.0),
        },
    )


def draw_config(spec: BenchSpec, i: int) -> SimConfig:
    """Config for simulation i; the draw order is the spec's param order."""
    rng = np.random.default_rng([spec.seed, 2, i])
    fields = {name: dist.draw(rng) for name, dist in spec.params.items()}
    if "T" in fields:
        fields["T"] = int(fields["T"])
    sim_seed = int(rng.integers(0, 2**31))
    return SimConfig(n_users=spec.n_users, seed=sim_seed, **fields)


# ---------------------------------------------------------------------------
# per-simulation workers (module level so process pools can pickle them)


def _sim_header(i: int, config: SimConfig) -> dict:
    return {
        "sim": i,
        "seed": config.seed,
        "T": config.T,
        "alpha_eff": config.alpha_eff,
        "beta_eff": config.beta_eff,
        "alpha_churn": config.alpha_churn,
        "beta_churn": config.beta_churn,
        "true_lte": true_lte(config),
        "true_derlv": true_delta_erlv(config, config.T),
    }


def _run_one_table1(spec: BenchSpec, i: int) -> dict:
    config = draw_config(spec, i)
    row = _sim_header(i, config)
    try:
        log = EventLog.from_records(generate(config), config.T)
    except ValueError as exc:
        row["error"] = str(exc)
        return row
    metric_panel = log.aggregate(MODE_METRIC)
    presence_panel = log.aggregate(MODE_PRESENCE)
    horizon = config.T if spec.horizon is None else spec.horizon

    series_of = {
        METHOD_CCD: ccd_series,
        METHOD_DID: did_series,
        METHOD_MC: lambda p: multicohort_series(p, LEARNING),
    }
    derlv_base = None
    for method in spec.methods:
        try:
            curve = series_of[method](metric_panel)
            row[f"width_{method}"] = mean_ci95_width(curve) if curve.points else None
            if method == METHOD_MC:
                row[f"lte_{method}"] = estimate_lte(metric_panel).value
                row[f"derlv_{method}"] = estimate_delta_erlv(
                    metric_panel, presence_panel, horizon).value
            else:
                row[f"lte_{method}"] = baseline_lte(metric_panel, method).value
                if derlv_base is None:
                    derlv_base = delta_erlv_from_fits(
                        _baseline_fits(metric_panel, presence_panel), horizon)
                row[f"derlv_{method}"] = derlv_base
        except Exception as exc:  # noqa: BLE001  scored as a per-method failure
            row[f"error_{method}"] = str(exc)
    return row


def _run_one_scenario2(spec: BenchSpec, i: int) -> dict:
    config = draw_config(spec, i)
    row = _sim_header(i, config)
    try:
        records = generate(config)
        report = bootstrap_report(
            records,
            B=max(50, spec.bootstrap),
            seed=config.seed,
            window=spec.window,
            horizon=config.T if spec.horizon is None else spec.horizon,
            methods=spec.methods,
            T=config.T,
        )
    except (ValueError, MetricUnavailable) as exc:
        row["error"] = str(exc)
        return row

    for label, est in (("ste", report.ste), ("lte", report.lte), ("derlv", report.derlv)):
        if est is None:
            continue
        row[label] = est.value
        row[f"{label}_std"] = est.std
        row[f"{label}_lo"], row[f"{label}_hi"] = est.ci95
    row["unstable"] = int(report.unstable)
    row["curves"] = {
        name: _curve_values(report.curves[name], config.T)
        for name in ("metric_T", "metric_C", "survival_T", "survival_C")
        if name in report.curves
    }
    return row


def _curve_values(curve, T: int) -> list[float]:
    vals = [float("nan")] * T
    for t, est in curve.points:
        if 0 <= t < T:
            vals[t] = est.value
    return vals


# ---------------------------------------------------------------------------
# drivers


def parallel_map(fn, items, jobs: int | None = 1) -> list:
    """Order-preserving map, optionally over a process pool."""
    items = list(items)
    jobs = (os.cpu_count() or 1) if jobs in (None, 0) else int(jobs)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    chunk = max(1, len(items) // (jobs * 4))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


@dataclass
class BenchReport:
    """Benchmark results: per-simulation rows plus aggregate summaries."""

    spec: BenchSpec
    rows: list[dict]
    aggregates: dict
    failures: dict[str, int]
    notes: list[str] = field(default_factory=list)
    mean_curves: dict[str, list[float]] | None = None

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "aggregates": _json_clean(self.aggregates),
            "failures": dict(self.failures),
            "notes": list(self.notes),
            "mean_curves": _json_clean(self.mean_curves),
        }

    def write(self, out_dir) -> dict[str, str]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"report": str(out / "report.json"), "sims": str(out / "sims.csv")}
        (out / "report.json").write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        _write_rows_csv(out / "sims.csv", self.spec, self.rows)
        if self.mean_curves is not None:
            paths["curves"] = str(out / "curves.csv")
            _write_mean_curves_csv(out / "curves.csv", self.mean_curves)
        return paths


def _json_clean(obj):
    if obj is None or isinstance(obj, (str, int, bool)):
        return obj
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return _json_clean(obj.item())
    return obj


def _columns(spec: BenchSpec) -> list[str]:
    cols = ["sim", "seed", "T", "alpha_eff", "beta_eff", "alpha_churn", "beta_churn",
            "true_lte", "true_derlv"]
    if spec.experiment == TABLE1:
        for m in spec.methods:
            cols += [f"width_{m}", f"lte_{m}", f"derlv_{m}", f"error_{m}"]
    else:
        cols += ["ste", "ste_std", "ste_lo", "ste_hi",
                 "lte", "lte_std", "lte_lo", "lte_hi",
                 "derlv", "derlv_std", "derlv_lo", "derlv_hi", "unstable"]
    return cols + ["error"]


def _write_rows_csv(path, spec: BenchSpec, rows: list[dict]) -> None:
    cols = _columns(spec)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            writer.writerow(["" if row.get(c) is None else _cell(row.get(c)) for c in cols])


def _cell(value):
    if isinstance(value, float):
        return "" if not np.isfinite(value) else repr(value)
    return value


def _write_mean_curves_csv(path, curves: dict[str, list[float]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["curve", "t", "value"])
        for name in sorted(curves):
            for t, v in enumerate(curves[name]):
                writer.writerow([name, t, "" if not np.isfinite(v) else repr(float(v))])


def _mean_std(values) -> tuple[float, float]:
    arr = np.asarray([v for v in values if v is not None and np.isfinite(v)], dtype=np.float64)
    if arr.size == 0:
        return float("nan"), float("nan")
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else float("nan")
    return float(np.mean(arr)), std


def run_table1(spec: BenchSpec, jobs: int | None = 1) -> BenchReport:
    """Score every method on width and error over the parameter sweep."""
    if spec.experiment != TABLE1:
        raise ValueError(f"spec is for {spec.experiment!r}, expected {TABLE1!r}")
    rows = parallel_map(partial(_run_one_table1, spec), range(spec.n_sims), jobs)

    aggregates: dict = {}
    failures: dict[str, int] = {"sim": sum(1 for r in rows if "error" in r)}
    for m in spec.methods:
        ok = [r for r in rows if r.get(f"lte_{m}") is not None]
        widths = [r.get(f"width_{m}") for r in rows]
        ae_lte = [abs(r[f"lte_{m}"] - r["true_lte"]) for r in ok]
        ae_derlv = [abs(r[f"derlv_{m}"] - r["true_derlv"])
                    for r in rows if r.get(f"derlv_{m}") is not None]
        w_mean, w_std = _mean_std(widths)
        l_mean, l_std = _mean_std(ae_lte)
        d_mean, d_std = _mean_std(ae_derlv)
        aggregates[m] = {
            "ci95_width_mean": w_mean, "ci95_width_std": w_std,
            "mae_lte": l_mean, "ae_lte_std": l_std,
            "mae_derlv": d_mean, "ae_derlv_std": d_std,
            "n_scored": len(ok),
        }
        failures[m] = sum(1 for r in rows if f"error_{m}" in r)
    return BenchReport(spec=spec, rows=rows, aggregates=aggregates, failures=failures)


def run_scenario2(spec: BenchSpec, jobs: int | None = 1) -> BenchReport:
    """Decision metrics with bootstrap intervals over repeated experiments."""
    if spec.experiment != SCENARIO2:
        raise ValueError(f"spec is for {spec.experiment!r}, expected {SCENARIO2!r}")
    rows = parallel_map(partial(_run_one_scenario2, spec), range(spec.n_sims), jobs)

    aggregates: dict = {}
    for label in ("ste", "lte", "derlv"):
        mean, std = _mean_std([r.get(label) for r in rows])
        covered = [r[f"{label}_lo"] <= 0.0 <= r[f"{label}_hi"]
                   for r in rows
                   if r.get(f"{label}_lo") is not None and np.isfinite(r[f"{label}_lo"])]
        aggregates[label] = {
            "mean": mean,
            "std": std,
            "ci_covers_zero": int(sum(covered)),
            "n_with_ci": len(covered),
        }
    aggregates["negative_draws"] = {
        "alpha_eff": sum(1 for r in rows if r["alpha_eff"] < 0),
        "alpha_churn": sum(1 for r in rows if r["alpha_churn"] < 0),
    }
    failures = {
        "sim": sum(1 for r in rows if "error" in r),
        "unstable": sum(1 for r in rows if r.get("unstable")),
    }

    mean_curves: dict[str, list[float]] = {}
    T = int(draw_config(spec, 0).T)
    for name in ("metric_T", "metric_C", "survival_T", "survival_C"):
        per_sim = [r["curves"][name] for r in rows if "curves" in r and name in r["curves"]]
        if per_sim:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                mean_curves[name] = [float(v) for v in np.nanmean(np.asarray(per_sim), axis=0)]
        else:
            mean_curves[name] = [float("nan")] * T
    for arm in ("T", "C"):
        mean_curves[f"value_{arm}"] = [
            float(m * min(max(s, 0.0), 1.0))
            for m, s in zip(mean_curves[f"metric_{arm}"], mean_curves[f"survival_{arm}"])
        ]

    notes = []
    neg = aggregates["negative_draws"]
    if neg["alpha_eff"] or neg["alpha_churn"]:
        notes.append(
            f"negative parameter draws kept as drawn: alpha_eff in {neg['alpha_eff']} sims, "
            f"alpha_churn in {neg['alpha_churn']} sims"
        )
    for row in rows:
        row.pop("curves", None)
    return BenchReport(spec=spec, rows=rows, aggregates=aggregates, failures=failures,
                       notes=notes, mean_curves=mean_curves)


def run_bench(spec: BenchSpec, jobs: int | None = 1) -> BenchReport:
    """Dispatch on the experiment named by the spec."""
    if spec.experiment == TABLE1:
        return run_table1(spec, jobs)
    return run_scenario2(spec, jobs)
