import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def pytest_addoption(parser):
    parser.addoption("--skip-slow", action="store_true", help="skip ensemble-scale tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--skip-slow"):
        skip = pytest.mark.skip(reason="--skip-slow")
        for item in items:
            if "slow" in item.keywords:
                item.add_marker(skip)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: ensemble-scale test (tens of seconds or more)")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_state(rng, grid):
    from potheories.core import StateVector

    return StateVector.normalized(rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape), grid)
