import numpy as np
import pytest

from oracles import oracle_wls_decay

from longlift import DecayFit, UnfittableCurve, asymptote, fit_exponential, predict
from longlift.decay import BETA_MIN, _linear_solve


def decay(t, gamma, alpha, beta):
    return gamma + alpha * np.exp(-beta * np.asarray(t, dtype=float))


def test_noiseless_recovery(rng):
    ts = np.arange(14.0)
    for _ in range(20):
        gamma = float(rng.uniform(-1.0, 1.0))
        alpha = float(rng.uniform(0.2, 2.0)) * (1 if rng.random() < 0.7 else -1)
        beta = float(rng.uniform(0.05, 2.0))
        points = [(t, decay(t, gamma, alpha, beta), 1.0) for t in ts]
        fit = fit_exponential(points)
        assert fit.converged and not fit.degenerate
        assert fit.gamma == pytest.approx(gamma, abs=1e-6)
        assert fit.alpha == pytest.approx(alpha, abs=1e-6)
        assert fit.beta == pytest.approx(beta, abs=1e-6)
        assert asymptote(fit) == pytest.approx(gamma, abs=1e-6)


def test_fit_without_variances_uses_unit_weights(rng):
    ts = np.arange(10.0)
    ys = decay(ts, 0.3, 1.0, 0.5)
    with_var = fit_exponential([(t, y, 1.0) for t, y in zip(ts, ys)])
    without = fit_exponential([(t, y) for t, y in zip(ts, ys)])
    assert without.beta == pytest.approx(with_var.beta, abs=1e-9)
    assert without.gamma == pytest.approx(with_var.gamma, abs=1e-9)


def test_weighting_downplays_noisy_points():
    ts = np.arange(12.0)
    ys = decay(ts, 0.5, 1.5, 0.4)
    ys_bad = ys.copy()
    ys_bad[3] += 5.0  # gross outlier
    variances = np.full(ts.size, 1e-4)
    variances[3] = 1e4
    weighted = fit_exponential(list(zip(ts, ys_bad, variances)))
    unweighted = fit_exponential([(t, y, 1.0) for t, y in zip(ts, ys_bad)])
    assert abs(weighted.gamma - 0.5) < 1e-3
    assert abs(weighted.gamma - 0.5) < abs(unweighted.gamma - 0.5)
    assert abs(weighted.beta - 0.4) < abs(unweighted.beta - 0.4)


def test_constant_series_degenerates():
    fit = fit_exponential([(t, 2.5, 1.0) for t in range(6)])
    assert fit.degenerate and fit.converged
    assert fit.gamma == 2.5
    assert fit.alpha == 0.0 and fit.beta == 0.0
    assert predict(fit, 100.0) == 2.5


def test_growth_series_pins_beta_and_reports_nonconvergence():
    # linear growth has no decaying-exponential minimum; beta hits the grid edge
    fit = fit_exponential([(t, float(t), 1.0) for t in range(14)])
    assert not fit.converged
    assert fit.beta == pytest.approx(BETA_MIN, rel=1e-4)
    assert np.isfinite(fit.gamma) and np.isfinite(fit.alpha)


def test_too_few_points_unfittable():
    points = [(t, 1.0 + 0.5 * t, 1.0) for t in range(3)]
    with pytest.raises(UnfittableCurve, match="4"):
        fit_exponential(points)


def test_invalid_inputs_rejected():
    with pytest.raises(UnfittableCurve, match="finite"):
        fit_exponential([(0, float("nan"), 1.0), (1, 1.0, 1.0), (2, 1.0, 1.0), (3, 1.0, 1.0)])
    with pytest.raises(UnfittableCurve, match="variance"):
        fit_exponential([(0, 1.0, -1.0), (1, 1.0, 1.0), (2, 2.0, 1.0), (3, 1.0, 1.0)])
    with pytest.raises(UnfittableCurve, match="distinct"):
        fit_exponential([(1, 1.0, 1.0), (1, 2.0, 1.0), (2, 2.0, 1.0), (3, 1.0, 1.0)])


def test_refinement_never_worsens_sse(rng):
    ts = np.arange(14.0)
    for _ in range(5):
        ys = decay(ts, 0.2, 1.0, 0.7) + rng.normal(0, 0.1, ts.size)
        trace = []
        fit_exponential([(t, y, 1.0) for t, y in zip(ts, ys)], sse_trace=trace)
        assert len(trace) > 1
        assert all(b <= a + 1e-15 for a, b in zip(trace, trace[1:]))


def test_profiled_linear_solve_matches_bruteforce(rng):
    for _ in range(25):
        n = int(rng.integers(4, 15))
        ts = np.sort(rng.uniform(0, 12, n))
        ys = rng.normal(0, 2, n)
        ws = rng.uniform(0.1, 3.0, n)
        beta = float(rng.uniform(0.01, 3.0))
        ours = _linear_solve(ts, ys, ws, beta)
        ref = oracle_wls_decay(ts, ys, ws, beta)
        assert (ours is None) == (ref is None)
        if ours is not None:
            gamma, alpha, sse = ours
            assert gamma == pytest.approx(ref[0], abs=1e-9)
            assert alpha == pytest.approx(ref[1], abs=1e-9)
            assert sse == pytest.approx(ref[2], abs=1e-9)


def test_predict_shapes_and_to_dict():
    fit = DecayFit(gamma=0.5, alpha=1.0, beta=0.25, weighted_sse=0.0,
                   converged=True, degenerate=False)
    assert predict(fit, 0.0) == pytest.approx(1.5)
    out = predict(fit, np.array([0.0, 1.0]))
    assert out.shape == (2,)
    assert out[1] == pytest.approx(0.5 + np.exp(-0.25))
    assert fit.predict(2.0) == pytest.approx(predict(fit, 2.0))
    d = fit.to_dict()
    assert d["gamma"] == 0.5 and d["converged"] is True


def test_noisy_fit_beats_null_model(rng):
    # sanity: with decent signal the fit explains most variance
    ts = np.arange(14.0)
    ys = decay(ts, 1.0, 2.0, 0.5) + rng.normal(0, 0.05, ts.size)
    fit = fit_exponential([(t, y, 1.0) for t, y in zip(ts, ys)])
    null_sse = float(((ys - ys.mean()) ** 2).sum())
    assert fit.weighted_sse < 0.1 * null_sse
    assert fit.converged
