import time

import numpy as np
import pytest
from hypothesis import settings

from epitopo import experiment

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def finite_difference(f, x, idx, h=1e-5):
    """Central difference of scalar ``f()`` w.r.t. ``x[idx]`` (``x`` modified in place)."""
    old = x[idx]
    x[idx] = old + h
    up = f()
    x[idx] = old - h
    down = f()
    x[idx] = old
    return (up - down) / (2 * h)


@pytest.fixture(scope="session")
def desk_rgg():
    """Default desk benchmark (RGG, n=50, k=4, DTEF, 3 replicates), run once per session.

    Returns ``(records, seconds)``.
    """

    start = time.perf_counter()
    records = experiment.run_replicates(experiment.ExperimentConfig())
    return records, time.perf_counter() - start
