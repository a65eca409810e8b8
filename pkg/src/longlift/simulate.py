"""Synthetic staggered-entry experiment generator with known ground truth.

Users enter on a uniform random calendar day, carry a Gamma-distributed
base rate, and emit Poisson daily counts while retained. Control retention
is a constant daily probability; treatment multiplies the expected
surviving fraction by a decaying churn factor, realized through per-day
hazards so the population curve matches the target in expectation.
Treatment also shifts the Poisson rate by a decaying amount in elapsed
time, optionally on top of a persistent shift.

Because every configuration implies closed-form expected trajectories,
the generator doubles as an oracle: ``true_lte`` and ``true_delta_erlv``
return the quantities an estimator should recover.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .panel import ARM_CONTROL, ARM_TREATMENT, UserRecord


@dataclass(frozen=True)
class SimConfig:
    """Full parameterization of one synthetic experiment."""

    T: int = 14
    n_users: int = 10_000
    base_rate_shape: float = 2.0
    base_rate_scale: float = 0.5
    base_retention: float = 0.97
    alpha_eff: float = 0.1
    beta_eff: float = 1.0 / 3.0
    alpha_churn: float = 0.0
    beta_churn: float = 1.0 / 3.0
    persistent_eff: float = 0.0
    treatment_share: float = 0.5
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)


def churn_factor(alpha: float, beta: float, x) -> np.ndarray | float:
    """Multiplier on expected treated survival at elapsed day x: 1 + a(e^{-bx} - 1)."""
    return 1.0 + alpha * (np.exp(-beta * np.asarray(x, dtype=np.float64)) - 1.0)


def control_survival(config: SimConfig, x) -> np.ndarray | float:
    """Probability a control user is still retained x days after entry."""
    return config.base_retention ** np.asarray(x, dtype=np.float64)


def treated_survival(config: SimConfig, x) -> np.ndarray | float:
    """Expected treated surviving fraction: control survival times churn factor."""
    return control_survival(config, x) * churn_factor(config.alpha_churn, config.beta_churn, x)


def _treated_hazards(config: SimConfig) -> np.ndarray:
    """Per-step retention probabilities r(x) = S_T(x) / S_T(x-1) for x = 1..T-1.

    Realizing survival as a chain of day-by-day Bernoulli retentions makes
    churn absorbing while keeping the expected surviving fraction exactly
    on the target curve.
    """
    x = np.arange(config.T, dtype=np.float64)
    f = churn_factor(config.alpha_churn, config.beta_churn, x)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = config.base_retention * f[1:] / f[:-1]
    return ratios


def validate_config(config: SimConfig) -> None:
    """Reject configurations that cannot be realized; message names the field."""
    if not isinstance(config.T, (int, np.integer)) or config.T < 2:
        raise ValueError(f"T must be an integer >= 2, got {config.T!r}")
    if config.n_users < 1:
        raise ValueError(f"n_users must be >= 1, got {config.n_users}")
    if config.base_rate_shape <= 0 or config.base_rate_scale <= 0:
        raise ValueError("base rate Gamma parameters must be positive")
    if not 0 < config.base_retention <= 1:
        raise ValueError(f"base_retention must be in (0, 1], got {config.base_retention}")
    if config.beta_eff <= 0 or config.beta_churn <= 0:
        raise ValueError("decay rates beta_eff and beta_churn must be positive")
    if not 0 < config.treatment_share < 1:
        raise ValueError(f"treatment_share must be in (0, 1), got {config.treatment_share}")
    if config.seed < 0:
        raise ValueError(f"seed must be non-negative, got {config.seed}")
    # The churn multiplier itself may be drawn outside [0, 1]; what must
    # hold is that every implied per-day hazard is a probability.
    ratios = _treated_hazards(config)
    bad = np.where(~np.isfinite(ratios) | (ratios < 0) | (ratios > 1))[0]
    if bad.size:
        x = int(bad[0]) + 1
        raise ValueError(
            f"churn parameters (alpha={config.alpha_churn}, beta={config.beta_churn}) "
            f"imply treated retention {ratios[bad[0]]:.6g} at elapsed day {x}; "
            "per-day retention must lie in [0, 1]"
        )


def effect_at(config: SimConfig, x) -> np.ndarray | float:
    """Treatment shift on the expected daily rate at elapsed day x."""
    x = np.asarray(x, dtype=np.float64)
    return config.persistent_eff + config.alpha_eff * np.exp(-config.beta_eff * x)


def generate(config: SimConfig) -> list[UserRecord]:
    """Draw one synthetic experiment; only active user-days are emitted.

    Each user gets an independent substream keyed by (seed, user index),
    and draws follow a fixed order (base rate, entry day, arm, retention
    uniforms, daily counts), so output is reproducible user by user and
    invariant to batching.
    """
    validate_config(config)
    hazards = _treated_hazards(config)
    p = config.base_retention
    records = []
    width = max(6, len(str(config.n_users - 1)))
    for i in range(config.n_users):
        rng = np.random.default_rng([config.seed, 0, i])
        lam = rng.gamma(config.base_rate_shape, config.base_rate_scale)
        t0 = int(rng.integers(0, config.T))
        treated = bool(rng.random() < config.treatment_share)

        n_active = 1
        for x in range(1, config.T - t0):
            keep = hazards[x - 1] if treated else p
            if rng.random() >= keep:
                break
            n_active += 1

        if treated:
            rates = np.maximum(lam + effect_at(config, np.arange(n_active)), 0.0)
        else:
            rates = np.full(n_active, lam)
        counts = rng.poisson(rates)
        obs = tuple((t0 + x, float(counts[x]), True) for x in range(n_active))
        records.append(UserRecord(
            user_id=f"u{i:0{width}d}",
            arm=ARM_TREATMENT if treated else ARM_CONTROL,
            entry_day=t0,
            observations=obs,
        ))
    return records


# ---------------------------------------------------------------------------
# ground truth


def true_lte(config: SimConfig) -> float:
    """The persistent rate shift is exactly what the effect decays toward."""
    return float(config.persistent_eff)


def true_delta_erlv(config: SimConfig, horizon: int | None = None) -> float:
    """Expected retained-value difference per user over 0..horizon inclusive.

    Control contributes survival times the base mean; treatment contributes
    its inflated survival times the shifted rate. The per-user base rate
    enters only through its mean because rates and retention are independent.
    """
    horizon = config.T if horizon is None else int(horizon)
    x = np.arange(0, horizon + 1, dtype=np.float64)
    mu = config.base_rate_shape * config.base_rate_scale
    s_c = control_survival(config, x)
    s_t = s_c * churn_factor(config.alpha_churn, config.beta_churn, x)
    return float(np.sum(s_t * (mu + effect_at(config, x)) - s_c * mu))


def truth_summary(config: SimConfig, horizon: int | None = None) -> dict:
    """Ground-truth values an estimator run on this config should recover."""
    horizon = config.T if horizon is None else int(horizon)
    return {
        "lte": true_lte(config),
        "delta_erlv": true_delta_erlv(config, horizon),
        "horizon": horizon,
        "config": config.to_dict(),
    }


# ---------------------------------------------------------------------------
# config and truth files


def read_config(path) -> SimConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return SimConfig.from_dict(data)


def write_config(config: SimConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def write_truth(config: SimConfig, path, horizon: int | None = None) -> None:
    Path(path).write_text(json.dumps(truth_summary(config, horizon), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def with_overrides(config: SimConfig, **overrides) -> SimConfig:
    """Non-None overrides applied to a config; None values are ignored."""
    clean = {k: v for k, v in overrides.items() if v is not None}
    return replace(config, **clean) if clean else config
