import numpy as np
import pytest

from pmd.diagnostics import auto_grid_axes, build_grid_oracle
from pmd.model import Dataset, make_conjugate_gaussian, make_tied_mixture
from pmd.runner import generate_synthetic

# filled by tests/test_acceptance.py, echoed once at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def conj_one():
    """Prior N(0, 1), one datum 2.0, unit noise: posterior N(1, 0.5)."""
    return make_conjugate_gaussian([0.0], 1.0, 1.0, Dataset([2.0]))


@pytest.fixture(scope="session")
def mixture_data():
    return generate_synthetic("tied_mixture", {"theta": (1.0, -2.0), "sigma_x": 2.5, "mix_p": 0.5}, 2015, 1000)


@pytest.fixture(scope="session")
def mixture(mixture_data):
    return make_tied_mixture(1.0, 1.0, 2.5, 0.5, mixture_data)


@pytest.fixture(scope="session")
def mixture_oracle(mixture):
    return build_grid_oracle(mixture, auto_grid_axes(mixture))
