import numpy as np
import pytest

from phaseeiv import RegressionData


def synthetic(n, *, seed=0, b0=1.0, b1=3.0, su=0.3, se=0.5, x="exp"):
    rng = np.random.default_rng(seed)
    if x == "exp":
        xs = rng.exponential(size=n)
    elif x == "gauss":
        xs = rng.standard_normal(n)
    else:
        xs = np.abs(rng.standard_normal(n))
    w = xs + su * rng.standard_normal(n)
    y = b0 + b1 * xs + se * rng.standard_normal(n)
    return RegressionData(w, y)


@pytest.fixture
def small_data():
    return synthetic(40, seed=11)


@pytest.fixture
def data100():
    return synthetic(100, seed=3)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
