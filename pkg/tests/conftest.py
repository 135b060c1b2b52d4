"""Pytest fixtures and test utilities."""
import tempfile
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from engine.actuarial import IncomeModel
from engine.household import HouseholdSpec
from engine.market import build_market
from engine.presets import load_preset
from engine.riccati import solve_for_household


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="Run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tmp_output_dir():
    """Create a temporary output directory."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture(scope="session")
def params():
    """Preset market parameters."""
    return load_preset()


@pytest.fixture(scope="session")
def market(params):
    """Preset market solved to the 60-year horizon."""
    return build_market(params, tau_max=60.0)


@pytest.fixture(scope="session")
def household():
    """Default household: age 35, retirement in 30 years, horizon 60 years."""
    return HouseholdSpec()


@pytest.fixture(scope="session")
def short_household():
    """Household with a 10-year horizon so simulations stay quick."""
    return HouseholdSpec(income=IncomeModel(T_R=5.0, T=10.0))


@pytest.fixture(scope="session")
def solve(params):
    """Cached Gamma solutions keyed by household."""

    @lru_cache(maxsize=None)
    def _solve(hh: HouseholdSpec):
        return solve_for_household(params, hh)

    return _solve


@pytest.fixture(scope="session")
def sol(solve, household):
    """Gamma solution for gamma = 10, theta = 0."""
    return solve(household)


def central_difference(func, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Gradient of a scalar function by central differences.

    Args:
        func: Scalar function of a 1-D array
        x: Evaluation point
        h: Step per coordinate

    Returns:
        Gradient with the shape of x
    """
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (func(x + e) - func(x - e)) / (2 * h)
    return grad


def relative_error(a, b) -> float:
    """max |a - b| / max(|b|, tiny)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))
