"""Weighted nonlinear least-squares fit of the decay model g + a*exp(-b*t).

The model is linear in (g, a) once b is fixed, so the solver profiles b:
a log-spaced grid scan picks the best decay rate, a golden-section pass
refines it, and the closed-form weighted linear solve supplies (g, a) at
every candidate. This is derivative-free and cannot diverge the way a
gradient-based solver can on short, noisy series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

BETA_MIN = 1e-3
BETA_MAX = 10.0
GRID_SIZE = 200
#: b values with b * max(t) below this leave exp(-b*t) indistinguishable
#: from a constant, which makes the (g, a) solve wildly ill-conditioned.
COLLINEARITY_GUARD = 1e-3
GOLDEN_REL_WIDTH = 1e-8

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class UnfittableCurve(ValueError):
    """Raised when a series has too few points to support the 3-parameter fit."""


@dataclass(frozen=True)
class DecayFit:
    """Fitted parameters of g + a*exp(-b*t) with solver diagnostics."""

    gamma: float
    alpha: float
    beta: float
    weighted_sse: float
    converged: bool
    degenerate: bool = False

    def predict(self, t):
        return predict(self, t)

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "alpha": self.alpha,
            "beta": self.beta,
            "weighted_sse": self.weighted_sse,
            "converged": self.converged,
            "degenerate": self.degenerate,
        }


def predict(fit: DecayFit, t):
    """Model value at elapsed time t (scalar or array)."""
    t = np.asarray(t, dtype=np.float64)
    out = fit.gamma + fit.alpha * np.exp(-fit.beta * t)
    return float(out) if out.ndim == 0 else out


def asymptote(fit: DecayFit) -> float:
    """Limiting model value as t grows: the offset parameter."""
    return fit.gamma


def _linear_solve(t, y, w, beta):
    """Closed-form weighted LS for (g, a) in the basis {1, exp(-beta*t)}."""
    x = np.exp(-beta * t)
    sw = w.sum()
    sx = (w * x).sum()
    sxx = (w * x * x).sum()
    sy = (w * y).sum()
    sxy = (w * x * y).sum()
    det = sw * sxx - sx * sx
    if det <= 0 or not np.isfinite(det):
        return None
    gamma = (sxx * sy - sx * sxy) / det
    alpha = (sw * sxy - sx * sy) / det
    resid = y - gamma - alpha * x
    return gamma, alpha, float((w * resid * resid).sum())


def fit_exponential(points: Sequence, weighted: bool = True, sse_trace: list | None = None) -> DecayFit:
    """Fit the decay model to (t, y[, variance]) triples.

    Weights are the inverse variances when present and requested; unit
    weights otherwise. Fewer than four points cannot identify the three
    parameters and raise :class:`UnfittableCurve`. A constant series
    returns the degenerate fit (y, 0, 0). When ``sse_trace`` is a list,
    the best weighted SSE after the grid stage and after each refinement
    step is appended to it.
    """
    pts = [tuple(p) for p in points]
    if len(pts) < 4:
        raise UnfittableCurve(f"need at least 4 points to fit 3 parameters, got {len(pts)}")
    t = np.array([p[0] for p in pts], dtype=np.float64)
    y = np.array([p[1] for p in pts], dtype=np.float64)
    if not (np.isfinite(t).all() and np.isfinite(y).all()):
        raise UnfittableCurve("times and values must be finite")
    if np.unique(t).size < 4:
        raise UnfittableCurve(f"need at least 4 distinct time points, got {np.unique(t).size}")
    if weighted and len(pts[0]) > 2 and all(len(p) > 2 and p[2] is not None for p in pts):
        var = np.array([p[2] for p in pts], dtype=np.float64)
        if (var <= 0).any() or not np.isfinite(var).all():
            raise UnfittableCurve("point variances must be finite and > 0")
        w = 1.0 / var
    else:
        w = np.ones_like(y)

    if np.ptp(y) == 0.0:
        return DecayFit(gamma=float(y[0]), alpha=0.0, beta=0.0,
                        weighted_sse=0.0, converged=True, degenerate=True)

    t_max = float(t.max())
    grid = np.logspace(math.log10(BETA_MIN), math.log10(BETA_MAX), GRID_SIZE)
    grid = grid[grid * t_max >= COLLINEARITY_GUARD]
    if grid.size == 0:
        raise UnfittableCurve("time range too short to separate decay from a constant")

    # vectorized grid scan
    x = np.exp(-np.outer(grid, t))
    sw = w.sum()
    sy = (w * y).sum()
    sx = x @ w
    sxx = (x * x) @ w
    sxy = x @ (w * y)
    det = sw * sxx - sx * sx
    ok = (det > 0) & np.isfinite(det)
    gamma_g = np.where(ok, (sxx * sy - sx * sxy) / np.where(ok, det, 1.0), np.nan)
    alpha_g = np.where(ok, (sw * sxy - sx * sy) / np.where(ok, det, 1.0), np.nan)
    resid = y[None, :] - gamma_g[:, None] - alpha_g[:, None] * x
    sse_g = (resid * resid) @ w
    sse_g = np.where(ok, sse_g, np.inf)
    best = int(np.argmin(sse_g))  # ties break toward smaller beta (grid ascends)

    # golden-section refinement between the neighbours of the best grid point
    lo = grid[best - 1] if best > 0 else grid[0]
    hi = grid[best + 1] if best < grid.size - 1 else grid[-1]
    best_beta, best_sse = float(grid[best]), float(sse_g[best])
    if sse_trace is not None:
        sse_trace.append(best_sse)

    def sse_at(beta):
        sol = _linear_solve(t, y, w, beta)
        return math.inf if sol is None else sol[2]

    def consider(beta, sse):
        nonlocal best_beta, best_sse
        if sse < best_sse or (sse == best_sse and beta < best_beta):
            best_beta, best_sse = float(beta), float(sse)
        if sse_trace is not None:
            sse_trace.append(best_sse)

    a, b = float(lo), float(hi)
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = sse_at(c), sse_at(d)
    consider(c, fc)
    consider(d, fd)
    while (b - a) > GOLDEN_REL_WIDTH * max(abs(a), abs(b), BETA_MIN):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = sse_at(c)
            consider(c, fc)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = sse_at(d)
            consider(d, fd)

    sol = _linear_solve(t, y, w, best_beta)
    if sol is None:
        raise UnfittableCurve("decay basis is degenerate on this series")
    gamma, alpha, sse = sol
    # a minimum at a grid boundary means the data want a rate outside the
    # searchable range (growth pins low, cliff-like decay pins high)
    pinned = best_beta <= grid[0] * (1.0 + 1e-6) or best_beta >= grid[-1] * (1.0 - 1e-6)
    return DecayFit(gamma=float(gamma), alpha=float(alpha), beta=best_beta,
                    weighted_sse=float(sse), converged=not pinned, degenerate=False)
