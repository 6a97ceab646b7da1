import functools
import time

import numpy as np
import pytest
from hypothesis import settings

from quadsim.experiment import ExperimentSpec, run_experiment
from quadsim.morphology import load_model

ACCEPTANCE_LINES = []

settings.register_profile("ci", derandomize=True)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def model():
    return load_model()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@functools.lru_cache(maxsize=None)
def cached_run(scenario, duration, speed=None, slope_deg=0.0, seed=0):
    """Closed-loop runs are expensive; share them across test modules."""
    spec = ExperimentSpec(scenario=scenario, duration=duration, commanded_velocity=speed,
                          slope_deg=slope_deg, seed=seed)
    t0 = time.perf_counter()
    result = run_experiment(spec, write_outputs=False)
    result.wall_time = time.perf_counter() - t0
    return result


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
