from dataclasses import replace
from types import SimpleNamespace
import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import I_SC, fig4_deposit
from nanocoupling import coupling
from nanocoupling.core import HBAR, MU_0, MU_B, TWO_PI, DomainError, resonance_field, spin_polarization
from nanocoupling.coupling import (cell_coupling, collective_coupling, couple_deposit, deposit_fields, edge_point,
                                   single_spin_coupling, sweep_width, temperature_curve, transverse_amplitude)
from nanocoupling.deposit import (Heightmap, Rectangle, SpinSpecies, aggregate_heightmap, default_active_region,
                                  synthetic_aggregates, voxelize)
from nanocoupling.geometry import ResonatorSpec

H_RES = resonance_field(TWO_PI * 1.4e9, 2.0)
vec3 = st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 1e-3)


@pytest.fixture(scope="module")
def small(sol_coarse):
    """A few aggregates over the 158 nm constriction, N = 1e7."""
    dep = synthetic_aggregates(4, Rectangle.centered(0.5e-6), 6, (40e-9, 100e-9), SpinSpecies(), 10e-9,
                               active_region=Rectangle.centered(0.6e-6)).calibrated(1e7)
    return dep, deposit_fields(dep, sol_coarse)


def test_transverse_amplitude_examples():
    assert transverse_amplitude([0, 2.0, 0], [0, 1, 0]) == 0.0
    assert transverse_amplitude([1.0, 0, 0], [0, 1, 0]) == 0.5
    b = np.array([1.0, 1.0, 0.0]) / math.sqrt(2)
    assert transverse_amplitude(b, [0, 3.0, 0]) == pytest.approx(math.sqrt(2) / 4, rel=1e-15)
    with pytest.raises(DomainError):
        transverse_amplitude(b, [0, 0, 0])


@given(b=vec3, h=vec3)
def test_transverse_amplitude_bounded(b, h):
    assert transverse_amplitude(b, h) <= 0.5 * np.linalg.norm(b) * (1 + 1e-12)


def test_cell_coupling_examples():
    # g mu_B b / (2 hbar) / 2 pi at b_perp = 1 uT
    expected = 2.0 * MU_B * 1e-6 / (2 * HBAR) / TWO_PI
    assert expected == pytest.approx(14.0e3, rel=2e-3)
    assert cell_coupling(1, [1e-6, 0, 0]) / TWO_PI == pytest.approx(expected, rel=1e-14)
    assert cell_coupling(0, [1e-6, 0, 0]) == 0.0
    assert cell_coupling(100, [1e-6, 0, 3e-6]) / cell_coupling(1, [1e-6, 0, 3e-6]) == pytest.approx(10, rel=1e-15)
    with pytest.raises(DomainError):
        cell_coupling(-1, [1e-6, 0, 0])


def test_collective_coupling_examples():
    assert collective_coupling([3.0]) == 3.0
    assert collective_coupling(np.full(400, 2.5)) == pytest.approx(20 * 2.5, rel=1e-15)
    assert collective_coupling([]) == 0.0


def test_quadrature_identity_and_average(small, sol_coarse):
    dep, b = small
    r = couple_deposit(dep, sol_coarse, T=0.044, b=b)
    assert r.G_N ** 2 == pytest.approx(np.sum(r.G ** 2), rel=1e-14)
    assert r.G1_avg * math.sqrt(r.N_eff) == pytest.approx(r.G_N, rel=1e-14)
    assert r.G1_avg <= r.G1_max
    assert r.N_eff == pytest.approx(dep.total * spin_polarization(H_RES, 0.044), rel=1e-14)


@pytest.mark.parametrize("k", [4, 100, 0.01])
def test_sqrt_n_law(small, sol_coarse, k):
    dep, b = small
    a = couple_deposit(dep, sol_coarse, T=0.044, b=b).G_N
    c = couple_deposit(dep.scaled(k), sol_coarse, T=0.044, b=b).G_N
    assert c / a == pytest.approx(math.sqrt(k), rel=1e-12)


@given(h=vec3)
def test_orientation_bound(small, sol_coarse, h):
    dep, b = small
    G = couple_deposit(dep, sol_coarse, H_dir=h, b=b).G_N
    bound = (2.0 * MU_B / HBAR) * math.sqrt(np.sum(dep.counts * (0.5 * np.linalg.norm(b, axis=1)) ** 2))
    assert G <= bound * (1 + 1e-12)


def test_orientation_bound_attained_only_for_perpendicular_field(sol_coarse):
    # a spin straight above the line centre sees b along x only
    dep = voxelize(Heightmap(10e-9, 10e-9, -5e-9, -5e-9, np.full((1, 1), 10e-9)), SpinSpecies(), 10e-9)
    b = deposit_fields(dep, sol_coarse)
    bound = (2.0 * MU_B / HBAR) * math.sqrt(dep.total) * 0.5 * np.linalg.norm(b)
    assert couple_deposit(dep, sol_coarse, H_dir=(0, 1, 0), b=b).G_N == pytest.approx(bound, rel=1e-9)
    assert couple_deposit(dep, sol_coarse, H_dir=(1, 1, 0), b=b).G_N < 0.8 * bound


def test_line_axis_is_the_best_orientation(small, sol_coarse):
    dep, b = small
    along = couple_deposit(dep, sol_coarse, H_dir=(0, 1, 0), b=b).G_N
    across = couple_deposit(dep, sol_coarse, H_dir=(1, 0, 0), b=b).G_N
    assert along > across


def test_temperature_curve_identity(small, sol_coarse):
    dep, b = small
    temps = [0.01, 0.044, 0.5, 4.2]
    rows = temperature_curve(dep, sol_coarse, temperatures=temps, b=b)
    G0 = couple_deposit(dep, sol_coarse, T=0.0, b=b)
    for row in rows:
        x = 2.0 * MU_B * H_RES * 0.5 / (1.380649e-23 * row["T_K"])
        assert row["G_N"] == pytest.approx(G0.G_N * math.sqrt(math.tanh(x)), rel=1e-12)
        direct = couple_deposit(dep, sol_coarse, T=row["T_K"], b=b)
        assert row["G_N"] == pytest.approx(direct.G_N, rel=1e-14)
    assert G0.G_N == pytest.approx(G0.G1_avg * math.sqrt(dep.total), rel=1e-14)
    with pytest.raises(DomainError):
        temperature_curve(dep, sol_coarse, temperatures=[0.0], b=b)


def test_empty_deposit_warns(sol_coarse):
    dep = voxelize(Heightmap(1e-8, 1e-8, 0, 0, np.zeros((3, 3))), SpinSpecies(), 1e-8)
    with pytest.warns(RuntimeWarning, match="G_N = 0"):
        r = couple_deposit(dep, sol_coarse)
    assert r.G_N == 0.0 and r.N_eff == 0.0


def test_voxels_inside_film_rejected(sol_coarse):
    dep = voxelize(Heightmap(1e-8, 1e-8, -5e-9, -5e-9, np.full((1, 1), 1e-8)), SpinSpecies(), 1e-8)
    sunk = replace(dep, origin=dep.origin - np.array([0, 0, 3e-8]))
    with pytest.raises(DomainError, match="film volume"):
        couple_deposit(sunk, sol_coarse)


def test_single_spin_near_edge(sol42):
    G = single_spin_coupling(sol42, edge_point(sol42, 3e-9)) / TWO_PI
    assert 500 < G < 1000
    assert edge_point(sol42, 3e-9)[0] == pytest.approx(21e-9)


def test_result_exports(tmp_path, small, sol_coarse):
    dep, b = small
    r = couple_deposit(dep, sol_coarse, T=0.044, b=b)
    r.write_json(tmp_path / "c.json", extra={"tag": "x"})
    doc = json.loads((tmp_path / "c.json").read_text())
    assert doc["G_N_over_2pi_Hz"] == pytest.approx(r.G_N / TWO_PI)
    assert doc["tag"] == "x" and doc["n_cells"] == dep.n_voxels
    r.write_map_csv(tmp_path / "m.csv")
    with open(tmp_path / "m.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x_m", "y_m", "G_over_2pi_Hz"]
    proj = r.projection_map()
    assert len(rows) - 1 == len(proj) == len({tuple(ij) for ij in dep.index[:, :2]})
    assert proj[:, 2].max() == pytest.approx(r.g1_cell.max())


def test_sweep_is_order_independent_and_sorted(monkeypatch):
    def fake_solve(spec, target_cells, backend=None):
        return SimpleNamespace(w=spec.constriction_width, mesh=SimpleNamespace(n_cells=0))

    def fake_coupling(sol, point, H_dir, g, backend):
        return 1.0 / sol.w / (1 + point[2])

    monkeypatch.setattr(coupling, "solve_resonator", fake_solve)
    monkeypatch.setattr(coupling, "single_spin_coupling", fake_coupling)
    a = sweep_width([3e-7, 1e-7, 2e-7], [2e-9, 1e-9])
    b = sweep_width([2e-7, 3e-7, 1e-7, 1e-7], [1e-9, 2e-9])
    strip = lambda rows: [(r["width_m"], r["z_m"], r["G1"]) for r in rows]  # noqa: E731
    assert strip(a) == strip(b)
    assert [r["width_m"] for r in a] == sorted(r["width_m"] for r in a)


def test_sweep_records_failures_and_continues(monkeypatch):
    real = coupling.solve_resonator

    def flaky(spec, target_cells, backend=None):
        if spec.constriction_width < 1e-7:
            raise RuntimeError("singular")
        return real(spec, target_cells, backend)

    monkeypatch.setattr(coupling, "solve_resonator", flaky)
    template = replace(ResonatorSpec(), constriction_length=1e-6)
    rows = sweep_width([5e-8, 3e-7], [3e-9], template=template, target_cells=600)
    assert rows[0]["status"].startswith("error") and math.isnan(rows[0]["G1"])
    assert rows[1]["status"] == "ok" and rows[1]["G1"] > 0
    with pytest.raises(DomainError):
        sweep_width([], [3e-9])
    with pytest.raises(DomainError):
        sweep_width([1e-7], [-1e-9])


def test_very_wide_line_gives_sub_hertz_coupling():
    # thin-strip centre: K = 2I / (pi W), b = mu_0 K / 2
    W = 400e-6
    rows = sweep_width([W], [1.5e-9], target_cells=600)
    G = rows[0]["G1"] / TWO_PI
    expected = cell_coupling(1.0, [MU_0 * I_SC / (math.pi * W), 0, 0]) / TWO_PI
    assert G == pytest.approx(expected, rel=0.02)
    assert 1e-3 < G < 1.0


@pytest.mark.slow
def test_cell_size_convergence(fig4, sol42):
    dep3, b3 = fig4
    dep6 = fig4_deposit(6e-9)
    g3 = couple_deposit(dep3, sol42, T=0.044, b=b3).G_N
    g6 = couple_deposit(dep6, sol42, T=0.044).G_N
    assert abs(g3 - g6) / g3 < 0.05


@pytest.mark.xfail(strict=True, reason="far spins above the 1-2 um wide taper contribute ~2%; see decisions ledger")
def test_far_spins_are_negligible(sol42):
    near = fig4_deposit(6e-9)
    G_near = couple_deposit(near, sol42, T=0.044).G_N
    active = default_active_region(42e-9)
    rng = np.random.Generator(np.random.PCG64(2))
    centers, radii = [], []
    while len(centers) < 40:
        p, r = rng.uniform(-0.9e-6, 0.9e-6, 2), rng.uniform(50e-9, 150e-9)
        if np.hypot(*p) - r > 5e-7:
            centers.append(p)
            radii.append(r)
    far = voxelize(aggregate_heightmap(centers, radii, active, 3e-9), SpinSpecies(), 6e-9, active).calibrated(1e8)
    G_far = couple_deposit(far, sol42, T=0.044).G_N
    change = math.hypot(G_near, G_far) / G_near - 1
    print(f"far-spin change in G_N: {change:.4f}")
    assert change < 0.01
