from dataclasses import replace
import os

import pytest
from hypothesis import HealthCheck, settings

from nanocoupling.current_solver import solve_current, solve_resonator
from nanocoupling.core import rms_supercurrent
from nanocoupling.geometry import ResonatorSpec, SheetStack, build_geometry, mesh_geometry

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

I_SC = rms_supercurrent(ResonatorSpec().omega_r, ResonatorSpec().Z0)


@pytest.fixture(scope="session")
def spec42():
    return replace(ResonatorSpec(), constriction_width=42e-9, constriction_length=500e-9)


@pytest.fixture(scope="session")
def sol42(spec42):
    """42 nm constriction at the default mesh and the rms vacuum current."""
    return solve_resonator(spec42)


@pytest.fixture(scope="session")
def sol_coarse():
    """158 nm constriction on a coarse mesh, for fast structural tests."""
    spec = replace(ResonatorSpec(), constriction_width=158e-9, constriction_length=1e-6)
    return solve_resonator(spec, target_cells=600)


@pytest.fixture(scope="session")
def strip():
    """Uniform 14 um strip carrying the vacuum current."""
    geom = build_geometry(ResonatorSpec())
    sheets = SheetStack.equidistant(geom.thickness, 11)
    mesh = mesh_geometry(geom, 2000)
    return solve_current(geom, mesh, sheets, I_SC)


def fig4_deposit(d):
    """Reference aggregate deposit on the 42 nm constriction, N = 1.6e8."""
    from nanocoupling.deposit import Rectangle, SpinSpecies, default_active_region, synthetic_aggregates

    dep = synthetic_aggregates(1, Rectangle.centered(0.6e-6), 30, (50e-9, 150e-9), SpinSpecies(), d,
                               active_region=default_active_region(42e-9))
    return dep.calibrated(1.6e8)


@pytest.fixture(scope="session")
def fig4(sol42):
    """(deposit, voxel fields) of the reference deposit at d = 3 nm."""
    from nanocoupling.coupling import deposit_fields

    dep = fig4_deposit(3e-9)
    return dep, deposit_fields(dep, sol42)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
