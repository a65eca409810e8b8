import numpy as np
import pytest

from longlift import ARM_CONTROL, ARM_TREATMENT, UserRecord


def make_random_records(rng, n_users=30, T=7, p_active=0.8, lam=3.0, p_inactive_row=0.25):
    """Random event histories with gaps and some explicit inactive rows."""
    records = []
    for i in range(n_users):
        t0 = int(rng.integers(0, T))
        arm = ARM_TREATMENT if rng.random() < 0.5 else ARM_CONTROL
        obs = []
        for day in range(t0, T):
            if rng.random() < p_active:
                obs.append((day, float(rng.poisson(lam)), True))
            elif rng.random() < p_inactive_row:
                obs.append((day, 0.0, False))
        records.append(UserRecord(f"u{i:04d}", arm, t0, tuple(obs)))
    return records


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
