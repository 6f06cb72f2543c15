from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hcrisk.inference import SamplerConfig, run_chains
from hcrisk.model import ModelSpec, PriorConfig
from hcrisk.simulation import generate_dataset

settings.register_profile("hcrisk", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("hcrisk")


@pytest.fixture(scope="session")
def m6_data():
    return generate_dataset(seed=1)


@pytest.fixture(scope="session")
def m6_fit(m6_data):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return run_chains(m6_data, ModelSpec.from_name("M6"), PriorConfig(),
                          SamplerConfig(n_iterations=2000, n_burnin=1000, seed=11))


@pytest.fixture(scope="session")
def m1_fit(m6_data):
    return run_chains(m6_data, ModelSpec.from_name("M1"), PriorConfig(),
                      SamplerConfig(n_iterations=1000, n_burnin=500, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
