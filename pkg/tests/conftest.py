import sys
import warnings

import numpy as np
import pytest
from hypothesis import settings

from stepstress.model import InspectionGrid, ModelParams, StressPlan, cell_probabilities

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

SOLAR_TIMES = [1, 3, 5, 7, 8, 9, 10, 12, 13, 14, 15, 17, 19, 20]


@pytest.fixture
def solar_plan():
    return StressPlan((0.1, 0.5), (1.0,), 20.0)


@pytest.fixture
def solar_grid(solar_plan):
    return InspectionGrid.from_plan(solar_plan, SOLAR_TIMES)


@pytest.fixture
def theta0():
    return ModelParams(3.6597, -2.4131, 1.4)


@pytest.fixture
def three_level():
    """A second design with three stresses and uneven inspections."""
    plan = StressPlan((0.2, 0.6, 1.0), (2.0, 4.5), 8.0)
    grid = InspectionGrid.from_plan(plan, [1.0, 2.0, 3.0, 4.5, 6.0, 7.0, 8.0])
    return plan, grid, ModelParams(2.5, -1.5, 1.2)


def random_design(rng):
    """Random valid plan, grid and parameter used by several property tests.

    The first-level scale is tied to the test horizon and draws leaving some
    cell with probability below ``1e-4`` are rejected, so every cell carries
    information (a saturated design has an identically vanishing Jacobian).
    """
    while True:
        k = int(rng.integers(2, 5))
        levels = np.sort(rng.uniform(0.05, 1.5, size=k))
        if np.any(np.diff(levels) < 1e-3):
            continue
        changes = np.round(np.cumsum(rng.uniform(0.5, 4.0, size=k)), 6)
        termination = float(changes[-1])
        changes = changes[:-1]
        extra = rng.uniform(0, termination, size=int(rng.integers(0, 6)))
        times = np.unique(np.round(np.concatenate([changes, extra, [termination]]), 6))
        times = times[times > 1e-3]
        if np.any(np.diff(times) < 1e-2):
            continue
        a1 = float(rng.uniform(-3.0, -0.1))
        a0 = float(np.log(termination * rng.uniform(0.5, 3.0)) - a1 * levels[0])
        theta = ModelParams(a0, a1, float(rng.uniform(0.5, 3.0)))
        plan = StressPlan(tuple(levels), tuple(changes), termination)
        grid = InspectionGrid.from_plan(plan, times)
        if np.min(cell_probabilities(theta, plan, grid)) >= 1e-4:
            return plan, grid, theta


@pytest.fixture(autouse=True)
def _quiet_numerics():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
