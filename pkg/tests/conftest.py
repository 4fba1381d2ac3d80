import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lazysched.core import HarvestProcess, SystemConfig, reference_chain
from lazysched.sim import GENERAL_POLICIES, ExperimentSpec

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def cfg():
    return SystemConfig()


@pytest.fixture(scope="session")
def chain():
    return reference_chain()


@pytest.fixture(scope="session")
def general_spec():
    return ExperimentSpec(policies=GENERAL_POLICIES, seed=5)


@pytest.fixture(scope="session")
def memory_spec():
    return ExperimentSpec(policies=GENERAL_POLICIES, seed=5, harvest=HarvestProcess(kind="two_state_markov"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


@pytest.fixture
def record_criterion(request):
    """Log one PASS/FAIL line for an acceptance criterion and assert it."""
    def record(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        request.config.stash[_CRITERIA].append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: s.split("  ", 1)[1]):
            terminalreporter.write_line(line)
