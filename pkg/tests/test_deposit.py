import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nanocoupling.core import DomainError
from nanocoupling.deposit import (DPPH_DENSITY, Deposit, Heightmap, Rectangle, SpinSpecies, aggregate_heightmap,
                                  default_active_region, effective_counts, synthetic_aggregates, voxelize)

SPECIES = SpinSpecies()
RHO = DPPH_DENSITY


def flat(height=100e-9, side=1e-6, pixel=50e-9, x0=-0.5e-6, y0=-0.5e-6):
    n = int(round(side / pixel))
    return Heightmap(pixel, pixel, x0, y0, np.full((n, n), height))


def test_flat_film_count():
    dep = voxelize(flat(), SPECIES, 3e-9)
    assert dep.total == pytest.approx(RHO * 1e-19, rel=1e-12)


@given(d=st.floats(2e-9, 40e-9), h=st.floats(1e-9, 300e-9))
def test_flat_film_mass_conserved_for_any_cell(d, h):
    dep = voxelize(flat(h, side=0.3e-6, pixel=30e-9, x0=-0.15e-6, y0=0.0), SPECIES, d)
    assert dep.total == pytest.approx(RHO * 0.09e-12 * h, rel=5e-3)


def test_zero_heightmap_is_empty():
    dep = voxelize(flat(0.0), SPECIES, 3e-9)
    assert dep.total == 0.0 and dep.n_voxels == 0
    assert dep.centers().shape == (0, 3)


def test_hemisphere_volume():
    dep = synthetic_aggregates(0, Rectangle.centered(1e-6), 0, (50e-9, 50e-9), SPECIES, 3e-9)
    assert dep.n_voxels == 0
    r = 100e-9
    region = Rectangle.centered(0.6e-6)
    hm = aggregate_heightmap([(0.0, 0.0)], [r], region, 1e-9)
    dep = voxelize(hm, SPECIES, 3e-9, region)
    assert dep.total == pytest.approx(RHO * 2 / 3 * math.pi * r ** 3, rel=5e-3)


def test_overlapping_caps_take_the_larger_height():
    region = Rectangle.centered(0.6e-6)
    one = aggregate_heightmap([(0.0, 0.0)], [100e-9], region, 2e-9)
    two = aggregate_heightmap([(0.0, 0.0), (0.0, 0.0)], [100e-9, 50e-9], region, 2e-9)
    assert np.array_equal(one.heights, two.heights)


def test_voxel_size_invariance():
    region = Rectangle.centered(1.2e-6)
    hm = aggregate_heightmap([(0.0, 0.0), (2e-7, -1e-7), (-3e-7, 3e-7)], [150e-9, 80e-9, 60e-9], region, 1e-9)
    a = voxelize(hm, SPECIES, 3e-9, region).total
    b = voxelize(hm, SPECIES, 12e-9, region).total
    assert abs(a / b - 1) < 0.01


def test_synthetic_is_deterministic():
    region = Rectangle.centered(0.6e-6)
    a = synthetic_aggregates(7, region, 10, (50e-9, 150e-9), SPECIES, 6e-9)
    b = synthetic_aggregates(7, region, 10, (50e-9, 150e-9), SPECIES, 6e-9)
    c = synthetic_aggregates(8, region, 10, (50e-9, 150e-9), SPECIES, 6e-9)
    assert np.array_equal(a.index, b.index) and np.array_equal(a.counts, b.counts)
    assert a.total != c.total


def test_pcg64_stream_is_pinned():
    # the generator is named so fixtures survive numpy upgrades
    rng = np.random.Generator(np.random.PCG64(1))
    assert rng.uniform(0, 1, 2).tolist() == pytest.approx([0.5118216247002567, 0.9504636963259353], rel=1e-15)


def test_voxels_stay_in_active_region():
    region = Rectangle.centered(1e-6)
    active = Rectangle.centered(0.4e-6, cx=1e-7)
    dep = synthetic_aggregates(3, region, 20, (50e-9, 150e-9), SPECIES, 7e-9, active_region=active)
    c = dep.centers()
    assert np.all((c[:, 0] > active.x0) & (c[:, 0] < active.x1))
    assert np.all((c[:, 1] > active.y0) & (c[:, 1] < active.y1))
    assert np.all(c[:, 2] > 0)
    assert np.all(dep.counts >= 1e-6)


def test_active_region_clips_material():
    hm = flat(100e-9, side=2e-6, x0=-1e-6, y0=-1e-6)
    active = Rectangle.centered(1e-6)
    assert voxelize(hm, SPECIES, 7e-9, active).total == pytest.approx(RHO * 1e-19, rel=1e-12)


def test_voxelize_errors():
    hm = flat()
    with pytest.raises(DomainError):
        voxelize(hm, SPECIES, 0.0)
    with pytest.raises(DomainError, match="larger than the active region"):
        voxelize(hm, SPECIES, 2e-6)
    with pytest.raises(DomainError, match="exceeds heightmap extent"):
        voxelize(hm, SPECIES, 3e-9, Rectangle.centered(2e-6))
    with pytest.raises(DomainError, match="radius_range"):
        synthetic_aggregates(0, Rectangle.centered(1e-6), 3, (5e-9, 50e-9), SPECIES, 3e-9)


def test_invalid_inputs():
    with pytest.raises(DomainError):
        Heightmap(1e-9, 1e-9, 0, 0, np.array([[1e-9, -1e-9]]))
    with pytest.raises(DomainError):
        Heightmap(0.0, 1e-9, 0, 0, np.ones((2, 2)))
    with pytest.raises(DomainError):
        SpinSpecies(gamma=0.0)
    with pytest.raises(DomainError):
        SpinSpecies(efficiency=1.5)
    with pytest.raises(DomainError):
        Rectangle(0.0, 0.0, 0.0, 1.0)


@pytest.mark.parametrize("w,size", [(14e-6, 30e-6), (158e-9, 2e-6), (1e-6, 30e-6), (42e-9, 2e-6)])
def test_default_active_region(w, size):
    r = default_active_region(w)
    assert r.width == pytest.approx(size) and r.height == pytest.approx(size)
    assert r.x0 == pytest.approx(-size / 2)


def test_effective_counts_examples():
    dep = voxelize(flat(), SPECIES, 10e-9).calibrated(1.6e8)
    assert effective_counts(dep, 0.05, 0.0, SPECIES).total == pytest.approx(1.6e8, rel=1e-12)
    assert effective_counts(dep, 0.05, 0.044, SPECIES).total == pytest.approx(1.03e8, rel=5e-3)
    big = dep.calibrated(5e9)
    assert effective_counts(big, 0.05, 4.2, SPECIES).total == pytest.approx(4e7, rel=0.02)


@given(T=st.floats(0.0, 20.0), H=st.floats(1e-3, 1.0))
def test_thermal_weighting_preserves_ratios(T, H):
    region = Rectangle.centered(0.3e-6)
    dep = synthetic_aggregates(2, region, 3, (40e-9, 80e-9), SPECIES, 10e-9)
    eff = effective_counts(dep, H, T, SPECIES)
    assert np.allclose(eff.counts / eff.counts.max(), dep.counts / dep.counts.max(), rtol=1e-14, atol=0)


def test_calibration_and_scaling():
    dep = voxelize(flat(), SPECIES, 10e-9)
    assert dep.calibrated(1.6e8).total == pytest.approx(1.6e8, rel=1e-12)
    assert dep.scaled(4).total == pytest.approx(4 * dep.total, rel=1e-14)
    with pytest.raises(DomainError):
        dep.scaled(-1)
    empty = Deposit(d=1e-9, origin=np.zeros(3), index=np.zeros((0, 3), int), counts=np.zeros(0))
    with pytest.raises(DomainError):
        empty.calibrated(1.0)


def test_heightmap_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    hm = Heightmap(2e-9, 3e-9, -1e-7, 5e-8, rng.uniform(0, 1e-7, (4, 5)))
    hm.write(tmp_path / "h.txt")
    back = Heightmap.read(tmp_path / "h.txt")
    assert (back.nx, back.ny) == (5, 4)
    assert np.array_equal(back.heights, hm.heights)
    assert (back.dx, back.dy, back.x0, back.y0) == (hm.dx, hm.dy, hm.x0, hm.y0)


def test_heightmap_hand_written(tmp_path):
    p = tmp_path / "h.txt"
    p.write_text("2 2 1e-7 1e-7 0 0\n1e-7 1e-7\n1e-7 1e-7\n")
    dep = voxelize(Heightmap.read(p), SPECIES, 5e-8)
    assert dep.total == pytest.approx(RHO * 4e-21, rel=1e-12)


@pytest.mark.parametrize("text,where", [
    ("", "empty"),
    ("2 2 1e-9\n0 0\n0 0\n", ":1:"),
    ("2 2 1e-9 1e-9 0 0\n0 0\n", "expected 2 rows"),
    ("2 2 1e-9 1e-9 0 0\n0 0\n0\n", ":3:"),
])
def test_heightmap_read_errors(tmp_path, text, where):
    p = tmp_path / "bad.txt"
    p.write_text(text)
    with pytest.raises(DomainError, match=where):
        Heightmap.read(p)


def test_heightmap_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="nothere.txt"):
        Heightmap.read(tmp_path / "nothere.txt")


def test_deposit_csv(tmp_path):
    dep = synthetic_aggregates(1, Rectangle.centered(0.3e-6), 2, (40e-9, 60e-9), SPECIES, 10e-9)
    dep.write_csv(tmp_path / "d.csv")
    with open(tmp_path / "d.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x_m", "y_m", "z_m", "n_molecules"]
    vals = np.array(rows[1:], dtype=float)
    assert np.array_equal(vals[:, :3], dep.centers())
    assert np.array_equal(vals[:, 3], dep.counts)
