"""Learning and effect-trajectory estimators over a cohort panel.

Three estimators of the user-learning trajectory are provided: the
cookie-cookie-day comparison (first cohort vs. freshly entered cohort),
a first-cohort difference-in-differences, and the inverse-variance
weighted multi-cohort combination of every available cohort offset.
The multi-cohort machinery also runs in effect mode (treated minus
control at equal exposure) and in arm-level mode (a single arm's mean
trajectory), which is what the lifetime-value construction consumes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .panel import ARM_CONTROL, ARM_TREATMENT, CohortPanel, VARIANCE_FLOOR

LEARNING = "learning"
EFFECT = "effect"
ARM_LEVEL_T = "arm_level:T"
ARM_LEVEL_C = "arm_level:C"
DIFF_MODES = (LEARNING, EFFECT, ARM_LEVEL_T, ARM_LEVEL_C)

CURVE_HEADER = ["mode", "t", "value", "variance", "ci_lo", "ci_hi"]
Z95 = 1.96


class EstimatorUnavailable(RuntimeError):
    """An estimator cannot be formed at the requested point (unusable cells)."""


@dataclass(frozen=True)
class Estimate:
    """A point estimate with its variance and the cohort offsets used."""

    value: float
    variance: float
    k_used: tuple[int, ...]

    @property
    def ci95(self) -> tuple[float, float]:
        half = Z95 * float(np.sqrt(self.variance))
        return (self.value - half, self.value + half)


@dataclass
class LearningCurve:
    """A series of estimates over elapsed time for one diff mode."""

    mode: str
    points: list[tuple[int, Estimate]]

    #: minimum number of points the three-parameter decay fit needs
    MIN_FIT_POINTS = 4

    @property
    def fittable(self) -> bool:
        return len(self.points) >= self.MIN_FIT_POINTS

    def fit_points(self) -> list[tuple[float, float, float]]:
        return [(float(t), est.value, est.variance) for t, est in self.points]

    def values(self) -> np.ndarray:
        return np.array([est.value for _, est in self.points])


def _cell(panel: CohortPanel, arm: str, t0: int, t: int):
    cell = panel.get(arm, t0, t)
    if cell is None or not cell.usable:
        raise EstimatorUnavailable(f"cell (arm={arm}, t0={t0}, t={t}) missing or unusable")
    return cell


def ccd_learning(panel: CohortPanel, t: int) -> Estimate:
    """Learning at exposure t as first cohort minus freshly entered cohort.

    Value is the treated day-t mean of the entry-0 cohort minus the treated
    mean of the cohort entering on day t; the two cohorts are disjoint user
    sets, so the variances add.
    """
    return delta_k(panel, t, 0, LEARNING)


def did_learning(panel: CohortPanel, t: int) -> Estimate:
    """Learning at exposure t from the first cohort's within-arm changes.

    Differences the day-t minus day-0 change of the treated entry-0 cohort
    against the same change in control. The same users appear at both days,
    so each arm's variance subtracts twice the paired repeated-measure
    covariance (estimated from users observed on both days).
    """
    T = panel.T
    if not 0 <= t < T:
        raise ValueError(f"t={t} outside [0, {T})")
    tr_t = _cell(panel, ARM_TREATMENT, 0, t)
    tr_0 = _cell(panel, ARM_TREATMENT, 0, 0)
    co_t = _cell(panel, ARM_CONTROL, 0, t)
    co_0 = _cell(panel, ARM_CONTROL, 0, 0)
    value = (tr_t.mean - tr_0.mean) - (co_t.mean - co_0.mean)
    variance = (
        tr_t.var_of_mean + tr_0.var_of_mean
        - 2.0 * panel.baseline_mean_covariance(ARM_TREATMENT, t)
        + co_t.var_of_mean + co_0.var_of_mean
        - 2.0 * panel.baseline_mean_covariance(ARM_CONTROL, t)
    )
    return Estimate(value=value, variance=max(variance, VARIANCE_FLOOR), k_used=(0,))


def delta_k(panel: CohortPanel, t: int, k: int, diff_mode: str = LEARNING) -> Estimate:
    """Single-offset estimate at elapsed time t from the cohort entering at k.

    learning      -- treated cohort k at day t+k minus treated cohort t+k that day
    effect        -- treated minus control, both of cohort k at day t+k
    arm_level:T/C -- that arm's cohort-k mean at day t+k

    Cohorts entering on different days are disjoint user sets under
    randomization, so the cross-cohort covariance is taken as zero.
    """
    T = panel.T
    if t < 0 or k < 0 or t + k >= T:
        raise ValueError(f"(t={t}, k={k}) out of range: need t, k >= 0 and t + k < T={T}")
    day = t + k
    if diff_mode == LEARNING:
        a = _cell(panel, ARM_TREATMENT, k, day)
        b = _cell(panel, ARM_TREATMENT, day, day)
        value, variance = a.mean - b.mean, a.var_of_mean + b.var_of_mean
    elif diff_mode == EFFECT:
        a = _cell(panel, ARM_TREATMENT, k, day)
        b = _cell(panel, ARM_CONTROL, k, day)
        value, variance = a.mean - b.mean, a.var_of_mean + b.var_of_mean
    elif diff_mode == ARM_LEVEL_T:
        a = _cell(panel, ARM_TREATMENT, k, day)
        value, variance = a.mean, a.var_of_mean
    elif diff_mode == ARM_LEVEL_C:
        a = _cell(panel, ARM_CONTROL, k, day)
        value, variance = a.mean, a.var_of_mean
    else:
        raise ValueError(f"unknown diff_mode {diff_mode!r}")
    return Estimate(value=value, variance=max(variance, VARIANCE_FLOOR), k_used=(k,))


def inverse_variance_weights(variances: Sequence[float]) -> np.ndarray:
    """Normalized inverse-variance weights; they sum to one by construction."""
    inv = 1.0 / np.asarray(variances, dtype=np.float64)
    return inv / inv.sum()


def multicohort_estimate(
    panel: CohortPanel, t: int, diff_mode: str = LEARNING, ks: Iterable[int] | None = None
) -> Estimate:
    """Inverse-variance weighted combination of every usable cohort offset.

    Combines the single-offset estimates for k = 0 .. T-1-t (or the given
    subset) with weights proportional to their inverse variances; the
    combined variance is the harmonic sum, never above any individual one.
    """
    T = panel.T
    if not 0 <= t < T:
        raise ValueError(f"t={t} outside [0, {T})")
    if ks is None:
        ks = range(0, T - t)
    used, values, variances = [], [], []
    for k in ks:
        try:
            est = delta_k(panel, t, k, diff_mode)
        except EstimatorUnavailable:
            continue
        used.append(k)
        values.append(est.value)
        variances.append(est.variance)
    if not used:
        raise EstimatorUnavailable(f"no usable cohort offset at t={t} ({diff_mode})")
    inv = 1.0 / np.asarray(variances)
    total = float(inv.sum())
    value = float(np.dot(inv / total, values))
    return Estimate(value=value, variance=1.0 / total, k_used=tuple(used))


def multicohort_series(panel: CohortPanel, diff_mode: str = LEARNING) -> LearningCurve:
    """Multi-cohort estimates for every elapsed time, omitting unavailable ones."""
    points = []
    for t in range(panel.T):
        try:
            points.append((t, multicohort_estimate(panel, t, diff_mode)))
        except EstimatorUnavailable:
            continue
    return LearningCurve(mode=diff_mode, points=points)


def ccd_series(panel: CohortPanel) -> LearningCurve:
    points = []
    for t in range(panel.T):
        try:
            points.append((t, ccd_learning(panel, t)))
        except EstimatorUnavailable:
            continue
    return LearningCurve(mode=LEARNING, points=points)


def did_series(panel: CohortPanel) -> LearningCurve:
    points = []
    for t in range(panel.T):
        try:
            points.append((t, did_learning(panel, t)))
        except EstimatorUnavailable:
            continue
    return LearningCurve(mode=LEARNING, points=points)


def mean_ci95_width(curve: LearningCurve) -> float:
    """Average 95% confidence-interval width over a curve's points."""
    if not curve.points:
        return float("nan")
    widths = [2.0 * Z95 * np.sqrt(est.variance) for _, est in curve.points]
    return float(np.mean(widths))


def write_curves_csv(curves, path) -> None:
    """Export curves as ``mode,t,value,variance,ci_lo,ci_hi`` rows.

    Accepts ``LearningCurve`` objects or ``(label, curve)`` pairs; a pair's
    label replaces the curve's own mode string in the first column, which
    keeps metric-domain and survival-domain arm-level curves apart when
    several go into one file.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_HEADER)
        for item in curves:
            label, curve = item if isinstance(item, tuple) else (item.mode, item)
            for t, est in curve.points:
                lo, hi = est.ci95
                writer.writerow([label, t, repr(est.value), repr(est.variance), repr(lo), repr(hi)])
