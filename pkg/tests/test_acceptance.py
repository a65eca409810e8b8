"""End-to-end acceptance gate.

Nine criteria covering oracle equivalence, weighting algebra, fit
recovery, null calibration, variance-reduction and accuracy benchmarks,
the misleading-short-term scenario, byte determinism, and runtime.
Each test prints a single PASS/FAIL line (visible with ``pytest -s``
or in the captured output section). The statistical criteria run
full-size seeded benchmarks and take several minutes each; the whole
file is a deliberate long-running gate, not a unit suite.
"""

from __future__ import annotations

import filecmp
import time
from contextlib import contextmanager

import numpy as np
import pytest

from longlift import (
    MODE_METRIC,
    MODE_PRESENCE,
    DIFF_MODES,
    LEARNING,
    SimConfig,
    as_event_log,
    bootstrap_report,
    build_panel,
    delta_k,
    fit_exponential,
    generate,
    inverse_variance_weights,
    multicohort_estimate,
    run_bench,
    run_scenario2,
    run_table1,
    scenario2_spec,
    table1_spec,
)
from longlift.cli import main as cli_main
from longlift.estimators import EstimatorUnavailable

from conftest import make_random_records
from oracles import oracle_cells, oracle_delta_k, oracle_multicohort, oracle_weights
from test_panel import assert_panel_matches_oracle

TOL_EXACT = 1e-12


@contextmanager
def criterion(name):
    """Collect detail strings and print one PASS/FAIL line for the test."""
    detail: list[str] = []
    try:
        yield detail
    except BaseException as exc:
        print(f"{name}: FAIL ({exc})")
        raise
    print(f"{name}: PASS ({'; '.join(detail)})" if detail else f"{name}: PASS")


@pytest.fixture(scope="session")
def table1_result():
    """One full-size benchmark shared by criteria 5, 6 and 9."""
    start = time.perf_counter()
    report = run_table1(table1_spec(n_sims=100, n_users=10_000, seed=0), jobs=1)
    elapsed = time.perf_counter() - start
    return report, elapsed


def test_c1_oracle_equivalence():
    with criterion("C1 oracle equivalence") as detail:
        rng = np.random.default_rng(1)
        records = make_random_records(rng, n_users=30, T=7)
        start = time.perf_counter()

        log = as_event_log(records, T=7)
        for mode, label in ((MODE_METRIC, "metric"), (MODE_PRESENCE, "presence")):
            assert_panel_matches_oracle(
                build_panel(log, 7, mode), oracle_cells(records, 7, label), tol=TOL_EXACT
            )

        panel = build_panel(log, 7, MODE_METRIC)
        ocells = oracle_cells(records, 7, "metric")
        worst = 0.0
        for diff_mode in DIFF_MODES:
            for t in range(7):
                for k in range(7 - t):
                    ref = oracle_delta_k(ocells, t, k, diff_mode)
                    try:
                        est = delta_k(panel, t, k, diff_mode)
                    except EstimatorUnavailable:
                        assert ref is None
                        continue
                    assert ref is not None
                    worst = max(worst, abs(est.value - ref[0]), abs(est.variance - ref[1]))
                    assert est.value == pytest.approx(ref[0], abs=TOL_EXACT)
                    assert est.variance == pytest.approx(ref[1], abs=TOL_EXACT)

        for t in range(7):
            ref = oracle_multicohort(ocells, 7, t, LEARNING)
            try:
                est = multicohort_estimate(panel, t, LEARNING)
            except EstimatorUnavailable:
                assert ref is None
                continue
            assert ref is not None
            assert est.value == pytest.approx(ref[0], abs=TOL_EXACT)
            assert est.variance == pytest.approx(ref[1], abs=TOL_EXACT)
            variances = [delta_k(panel, t, k, LEARNING).variance for k in est.k_used]
            weights = inverse_variance_weights(variances)
            ref_w = oracle_weights([oracle_delta_k(ocells, t, k, LEARNING)[1] for k in est.k_used])
            assert len(ref_w) == len(weights)
            for got, want in zip(weights, ref_w):
                worst = max(worst, abs(got - want))
                assert got == pytest.approx(want, abs=TOL_EXACT)

        elapsed = time.perf_counter() - start
        assert elapsed < 1.0
        detail.append(f"max abs diff {worst:.2e}")
        detail.append(f"{elapsed:.3f}s")


def test_c2_weighting_algebra():
    with criterion("C2 weighting algebra") as detail:
        rng = np.random.default_rng(2)
        checked = 0
        for _ in range(100):
            T = int(rng.integers(5, 10))
            records = make_random_records(rng, n_users=int(rng.integers(20, 60)), T=T)
            panel = build_panel(records, T, mode=MODE_METRIC)
            for t in range(T):
                try:
                    est = multicohort_estimate(panel, t, LEARNING)
                except EstimatorUnavailable:
                    continue
                variances = np.array(
                    [delta_k(panel, t, k, LEARNING).variance for k in est.k_used]
                )
                weights = inverse_variance_weights(variances)
                assert abs(weights.sum() - 1.0) <= TOL_EXACT
                assert est.variance <= variances.min() * (1.0 + TOL_EXACT)
                checked += 1
        assert checked >= 100
        detail.append(f"{checked} (t, panel) combinations over 100 panels")


def test_c3_fit_recovery():
    with criterion("C3 fit recovery") as detail:
        rng = np.random.default_rng(3)
        t = np.arange(14, dtype=np.float64)
        worst = 0.0
        for _ in range(50):
            gamma = rng.uniform(-1.0, 1.0)
            alpha = rng.choice([-1.0, 1.0]) * rng.uniform(0.2, 2.0)
            beta = rng.uniform(0.05, 2.0)
            y = gamma + alpha * np.exp(-beta * t)
            fit = fit_exponential(list(zip(t, y)))
            for got, want in ((fit.gamma, gamma), (fit.alpha, alpha), (fit.beta, beta)):
                worst = max(worst, abs(got - want))
                assert got == pytest.approx(want, abs=1e-6)
        detail.append(f"50 draws, max abs param error {worst:.2e}")


def test_c4_null_calibration():
    with criterion("C4 null calibration") as detail:
        n_sims = 200
        cover_t = np.zeros(14)
        count_t = np.zeros(14)
        cover_lte = 0
        cover_derlv = 0
        for i in range(n_sims):
            config = SimConfig(
                T=14, n_users=10_000, alpha_eff=0.0, alpha_churn=0.0, seed=1000 + i
            )
            report = bootstrap_report(generate(config), B=200, seed=i, methods=("MC",))
            for t, est in report.curves["learning"].points:
                lo, hi = est.ci95
                count_t[t] += 1
                cover_t[t] += lo <= 0.0 <= hi
            assert report.lte is not None and report.derlv is not None
            lo, hi = report.lte.ci95
            cover_lte += lo <= 0.0 <= hi
            lo, hi = report.derlv.ci95
            cover_derlv += lo <= 0.0 <= hi

        # the t = 0 learning contrast is identically zero by construction,
        # so calibration is assessed on t = 1..13 plus the two value metrics
        rates = cover_t[1:] / count_t[1:]
        assert (count_t[1:] == n_sims).all()
        for t, rate in enumerate(rates, start=1):
            assert 0.90 <= rate <= 0.99, f"delta_MC({t}) coverage {rate:.3f}"
        assert 0.90 * n_sims <= cover_lte <= 0.99 * n_sims, f"LTE cover {cover_lte}/{n_sims}"
        assert 0.90 * n_sims <= cover_derlv <= 0.99 * n_sims, f"dERLV cover {cover_derlv}/{n_sims}"
        detail.append(f"delta_MC(t) coverage {rates.min():.3f}..{rates.max():.3f}")
        detail.append(f"LTE {cover_lte}/{n_sims}")
        detail.append(f"dERLV {cover_derlv}/{n_sims}")


def test_c5_variance_reduction(table1_result):
    with criterion("C5 variance reduction") as detail:
        report, _ = table1_result
        width = {m: report.aggregates[m]["ci95_width_mean"] for m in ("MC", "CCD", "DiD")}
        assert width["MC"] < width["CCD"] < width["DiD"]
        ratio_ccd = width["MC"] / width["CCD"]
        ratio_did = width["MC"] / width["DiD"]
        assert ratio_ccd < 0.7
        assert ratio_did < 0.5
        detail.append(
            "widths MC %.3f < CCD %.3f < DiD %.3f" % (width["MC"], width["CCD"], width["DiD"])
        )
        detail.append(f"MC/CCD {ratio_ccd:.3f}")
        detail.append(f"MC/DiD {ratio_did:.3f}")


def test_c6_accuracy(table1_result):
    with criterion("C6 accuracy") as detail:
        report, _ = table1_result
        agg = report.aggregates
        for key in ("mae_lte", "mae_derlv"):
            for baseline in ("CCD", "DiD"):
                assert agg["MC"][key] <= agg[baseline][key], (
                    f"{key}: MC {agg['MC'][key]:.4f} > {baseline} {agg[baseline][key]:.4f}"
                )
        assert agg["MC"]["mae_derlv"] <= 1.0
        detail.append(
            "MAE_LTE MC %.3f vs CCD %.3f / DiD %.3f"
            % (agg["MC"]["mae_lte"], agg["CCD"]["mae_lte"], agg["DiD"]["mae_lte"])
        )
        detail.append(
            "MAE_dERLV MC %.3f vs CCD %.3f / DiD %.3f"
            % (agg["MC"]["mae_derlv"], agg["CCD"]["mae_derlv"], agg["DiD"]["mae_derlv"])
        )


def test_c7_misleading_short_term():
    with criterion("C7 misleading short term") as detail:
        spec = scenario2_spec(n_sims=100, n_users=10_000, seed=2, bootstrap=120)
        report = run_scenario2(spec, jobs=1)
        assert all(count == 0 for count in report.failures.values())
        agg = report.aggregates

        ste, lte, derlv = agg["ste"], agg["lte"], agg["derlv"]
        sem_ste = ste["std"] / np.sqrt(spec.n_sims)
        sem_derlv = derlv["std"] / np.sqrt(spec.n_sims)
        assert ste["mean"] > 0 and ste["mean"] / sem_ste > 3
        assert lte["ci_covers_zero"] >= 80
        assert derlv["mean"] < 0 and -derlv["mean"] / sem_derlv > 3
        detail.append(f"STE {ste['mean']:.3f} ({ste['mean'] / sem_ste:.0f} sem)")
        detail.append(f"LTE CI covers 0 in {lte['ci_covers_zero']}/{lte['n_with_ci']}")
        detail.append(f"dERLV {derlv['mean']:.3f} ({-derlv['mean'] / sem_derlv:.0f} sem)")


def test_c8_determinism(tmp_path):
    with criterion("C8 determinism") as detail:
        spec = table1_spec(n_sims=4, n_users=300, seed=7)
        dirs = {}
        for label, jobs in (("serial", 1), ("rerun", 1), ("parallel", 2)):
            out = tmp_path / label
            run_bench(spec, jobs=jobs).write(out)
            dirs[label] = out
        for label in ("rerun", "parallel"):
            for name in ("report.json", "sims.csv"):
                assert filecmp.cmp(dirs["serial"] / name, dirs[label] / name, shallow=False), (
                    f"{name} differs between serial and {label}"
                )

        sim_out = tmp_path / "events.csv"
        args = ["simulate", "--users", "400", "--duration", "8", "--seed", "11",
                "--output", str(sim_out)]
        assert cli_main(args) == 0
        reports, curve_files = [], []
        for rerun in ("a", "b"):
            out = tmp_path / f"report_{rerun}.json"
            curves = tmp_path / f"curves_{rerun}.csv"
            code = cli_main(["analyze", "--input", str(sim_out), "--output", str(out),
                             "--curves", str(curves), "--bootstrap", "60", "--seed", "5"])
            assert code == 0
            reports.append(out.read_bytes())
            curve_files.append(curves.read_bytes())
        assert reports[0] == reports[1]
        assert curve_files[0] == curve_files[1]
        detail.append("bench serial == rerun == 2 workers; analyze rerun byte-identical")


def test_c9_runtime(table1_result):
    with criterion("C9 runtime") as detail:
        _, elapsed = table1_result
        assert elapsed < 900.0
        detail.append(f"100-sim benchmark in {elapsed:.0f}s on one core (budget 900s)")
