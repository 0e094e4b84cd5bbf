import numpy as np
import pytest

from nesvb.core import Layout
from nesvb.stats import RngStream


class StubModel:
    """Deterministic black-box objective over a flat vector, for estimator tests."""

    def __init__(self, fn, dim, name="stub"):
        self.fn = fn
        self.name = name
        self.layout = Layout({"x": dim})

    def elbo_batch(self, values, rng):
        return np.array([self.fn(v) for v in np.atleast_2d(values)])


@pytest.fixture
def linear_stub():
    a = np.array([1.5, -2.0, 0.25])
    return StubModel(lambda v: float(a @ v), 3, "linear"), a


@pytest.fixture
def quadratic_stub():
    return StubModel(lambda v: -float(v @ v), 3, "quadratic")


@pytest.fixture
def constant_stub():
    return StubModel(lambda v: 4.2, 3, "constant")


@pytest.fixture
def rng():
    return RngStream(1234, 0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_report():
    return ACCEPTANCE_LINES
