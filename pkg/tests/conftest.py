import numpy as np
import pytest

from voltsense.network import DerFleet, FeederTopology, LineParameters, bundled_feeder_path, load_feeder

ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Collect one pass/fail line per acceptance criterion for the terminal summary."""
    return ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def single_line():
    topo = FeederTopology.from_lines([(0, 1)])
    return topo, LineParameters.from_rx([0.2], [0.4])


@pytest.fixture
def chain():
    topo = FeederTopology.from_lines([(0, 1), (1, 2)])
    return topo, LineParameters.from_rx([0.1, 0.2], [0.2, 0.4])


@pytest.fixture(scope="session")
def ieee37():
    return load_feeder(bundled_feeder_path())


def random_params(n, rng):
    x = rng.uniform(0.01, 0.5, n)
    alpha = rng.uniform(0.2, 3.0, n)
    return LineParameters.from_alpha(x, alpha)


def one_der(q_max, n=1, bus=1):
    z = np.zeros(n)
    q = z.copy()
    q[bus - 1] = q_max
    return DerFleet(z, z, z, q)
