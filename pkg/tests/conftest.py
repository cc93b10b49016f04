import numpy as np
import pytest

from smallnoise_gof import limits
from smallnoise_gof.model import builtin_example1, builtin_invisible, builtin_ou, builtin_ou_level
from smallnoise_gof.ode import Grid
from smallnoise_gof.sde import NoiseStream, Trajectory, simulate


@pytest.fixture
def example1():
    return builtin_example1()


@pytest.fixture
def ou():
    return builtin_ou()


@pytest.fixture
def ou_level():
    return builtin_ou_level()


@pytest.fixture
def invisible():
    return builtin_invisible()


@pytest.fixture(scope="session")
def bridge_oracle():
    # KL draws at a truncation large enough that the tail correction is exact to ~1e-9 in variance
    return limits.sample_limit("BRIDGE_SQ", 100_000, 1000, seed=12345)


@pytest.fixture(scope="session")
def wiener_oracle():
    return limits.sample_limit("WIENER_SQ", 100_000, 1000, seed=54321)


def noiseless(model, theta, n=2000, eps=0.1):
    """Euler path with every Brownian increment set to zero."""
    grid = Grid(n, model.T)
    return simulate(model, theta, eps, grid, NoiseStream(0), increments=np.zeros(n))


def path(model, theta, eps, n=2000, seed=0, stream_id=0):
    return simulate(model, theta, eps, Grid(n, model.T), NoiseStream(seed, stream_id))


def as_traj(values, eps, T=1.0):
    values = np.asarray(values, dtype=float)
    return Trajectory(Grid(values.size - 1, T), values, eps)


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
