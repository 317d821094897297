import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dcim import LOAD_STATES, InfluenceModel, load_fixture

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def pair():
    return load_fixture("pair")


@pytest.fixture(scope="session")
def lb30():
    return load_fixture("lb30")


@pytest.fixture
def three_node():
    """Path 0 <- 1 <- 2 plus 2 -> 0, with distinct chains and cross matrices."""
    d = [[0.5, 0.25, 0.25],
         [0.0, 0.5, 0.5],
         [0.0, 0.0, 1.0]]
    a_self = [
        [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.1, 0.3, 0.6]],
        [[0.7, 0.2, 0.1], [0.3, 0.4, 0.3], [0.0, 0.2, 0.8]],
        [[0.5, 0.5, 0.0], [0.1, 0.8, 0.1], [0.0, 0.4, 0.6]],
    ]
    cross = {
        (1, 0): [[0.2, 0.8, 0.0], [0.5, 0.5, 0.0], [0.9, 0.1, 0.0]],
        (2, 0): [[0.4, 0.6, 0.0], [0.3, 0.7, 0.0], [0.6, 0.4, 0.0]],
        (2, 1): [[0.1, 0.9, 0.0], [0.2, 0.6, 0.2], [0.5, 0.5, 0.0]],
    }
    return InfluenceModel.build(LOAD_STATES, d, a_self, cross=cross).validated()


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line (printed in the terminal summary) and assert it."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(criterion, ok, detail):
        lines.append(f"{'PASS' if ok else 'FAIL'} {criterion}: {detail}")
        print(lines[-1])
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
