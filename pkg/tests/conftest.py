import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

from patmg.core import Grid, Medium, SensorArray  # noqa: E402
from patmg.wave import ForwardOperator  # noqa: E402


@pytest.fixture(autouse=True)
def _cache_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("PATMG_CACHE_DIR", str(tmp_path / "cache"))


def small_grid(n=48, nt=60, pml=8, h=1e-4, c=1500.0):
    return Grid.from_cfl((n, n), h, c, nt, cfl=0.3, pml_thickness=pml)


def random_medium(grid, seed=0, alpha0=0.0, y=1.5):
    rng = np.random.default_rng(seed)
    c0 = 1500 + 60 * rng.random(grid.dims)
    rho0 = 1000 + 80 * rng.random(grid.dims)
    return Medium.homogeneous(grid).with_maps(c0=c0, rho0=rho0, alpha0=alpha0 * np.ones(grid.dims), y=y)


def ring_sensors(grid, count=24, fraction=0.8):
    radius = fraction * 0.5 * min(grid.extent)
    return SensorArray.arc(radius, count, 0.0, 2 * np.pi * (1 - 1 / count))


@pytest.fixture(scope="session")
def grid():
    return small_grid()


@pytest.fixture(scope="session")
def lossless_op(grid):
    g = Grid(grid.dims, grid.spacing, grid.pml_thickness, grid.pml_alpha_max, grid.dt, grid.nt, 1560.0)
    return ForwardOperator(g, random_medium(g, 1), ring_sensors(g))


@pytest.fixture(scope="session")
def lossy_op(grid):
    g = Grid(grid.dims, grid.spacing, grid.pml_thickness, grid.pml_alpha_max, grid.dt, grid.nt, 1560.0)
    return ForwardOperator(g, random_medium(g, 2, alpha0=0.75), ring_sensors(g))


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one pass/fail line per acceptance criterion; printed in the summary."""
    def report(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
