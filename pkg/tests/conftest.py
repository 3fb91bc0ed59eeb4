import numpy as np
import pytest

from magnetostrophic.spectral import PhysParams, SpectralScalar, make_grid


def random_theta(grid, seed=0, batch=(), dealias=True):
    """Real mean-zero field from random grid values, optionally band-limited."""
    rng = np.random.default_rng(seed)
    values = rng.standard_normal(tuple(batch) + grid.shape)
    th = SpectralScalar.from_physical(values, grid)
    if dealias:
        th = SpectralScalar(th.coeffs * grid.mask, grid)
    return th


def grid_points(n):
    x = 2 * np.pi * np.arange(n) / n
    return np.meshgrid(x, x, x, indexing="ij")


@pytest.fixture
def params():
    return PhysParams()


@pytest.fixture
def grid8():
    return make_grid(8)


# --------------------------------------------------------------------------
# acceptance summary
# --------------------------------------------------------------------------

ACCEPTANCE_LINES = {}


def record_criterion(number, title, passed, detail):
    """Store the one-line verdict of an acceptance criterion."""
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES[number] = f"C{number:<2d} {status}  {title}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
