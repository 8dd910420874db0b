import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bsvsim.design import gaussian_pump, periodic_poling, phase_matching_function
from bsvsim.dispersion import FrequencyGrid, PhaseMismatchTable
from bsvsim.propagator import CrystalDesign

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

PAIR_NM = (1563.78, 1600.65)
ACCEPTANCE_LINES = []


def record(criterion: int, passed: bool, detail: str):
    """Log one acceptance line; printed in the terminal summary."""
    ACCEPTANCE_LINES.append((criterion, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(ACCEPTANCE_LINES, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def small_grid():
    return FrequencyGrid.from_wavelengths(*PAIR_NM, half_span_nm=30.0, n=31)


@pytest.fixture(scope="session")
def small_table(small_grid):
    return PhaseMismatchTable.build(small_grid)


@pytest.fixture(scope="session")
def ppktp_design(small_grid):
    poling = periodic_poling(46.0, 13.7e-3)
    pump = gaussian_pump(791.0, 2.71, small_grid)
    return CrystalDesign(poling, pump)


@pytest.fixture(scope="session")
def ppktp_phi(ppktp_design, small_table):
    return phase_matching_function(ppktp_design.poling, small_table)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
