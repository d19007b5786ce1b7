import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def full_sweep():
    """The full learning-rate by eta grid on the 19-state walk, run once per session."""
    import time

    from etamix.harness import SweepGrid, run_sweep

    started = time.perf_counter()
    records = run_sweep(SweepGrid())
    return records, time.perf_counter() - started
