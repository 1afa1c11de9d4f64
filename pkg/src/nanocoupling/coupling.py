"""Spin-photon couplings of voxel deposits and single spins.

Each voxel ``i`` with ``n_i`` effective spins couples with
``G_i = (g mu_B / hbar) sqrt(n_i) |<+1/2| b_i . S |-1/2>|``; for ``S = 1/2``
the matrix element is half the field component transverse to the static
field direction. Cells combine in quadrature, ``G_N = sqrt(sum G_i^2)``.
All rates are rad/s; exports report ``/2pi`` in Hz.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
import csv
import json
import math
import warnings

import numpy as np

from .core import DomainError, HBAR, MU_B, TWO_PI, resonance_field, spin_polarization
from .current_solver import solve_resonator
from .deposit import SpinSpecies, effective_counts
from .field_map import field_at, field_points
from .geometry import ResonatorSpec
from .kernels.biot_savart import DEFAULT_THETA

LINE_AXIS = (0.0, 1.0, 0.0)


def _unit(H_dir):
    h = np.asarray(H_dir, dtype=float)
    norm = np.linalg.norm(h)
    if h.shape != (3,) or not norm > 0 or not np.isfinite(norm):
        raise DomainError(f"field direction must be a non-zero 3-vector, got {H_dir!r}")
    return h / norm


def transverse_amplitude(b, H_dir):
    """``|b - (b . H) H| / 2`` (T) for field vector(s) ``b`` of shape ``(..., 3)``."""
    h = _unit(H_dir)
    b = np.asarray(b, dtype=float)
    perp = b - (b @ h)[..., None] * h
    out = 0.5 * np.linalg.norm(perp, axis=-1)
    return float(out) if out.ndim == 0 else out


def cell_coupling(n, b, H_dir=LINE_AXIS, g=2.0):
    """``G_i`` (rad/s) of ``n`` spins in field ``b``; broadcasts over cells."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 0):
        raise DomainError("spin counts must be non-negative")
    out = (g * MU_B / HBAR) * np.sqrt(n) * transverse_amplitude(b, H_dir)
    return float(out) if np.ndim(out) == 0 else out


def collective_coupling(G):
    """Quadrature sum ``sqrt(sum G_i^2)``."""
    G = np.asarray(G, dtype=float).ravel()
    return float(np.sqrt(np.dot(G, G)))


def single_spin_coupling(sol, point, H_dir=LINE_AXIS, g=2.0, backend=None):
    """Coupling (rad/s) of one spin at ``point`` (exact field sum)."""
    return cell_coupling(1.0, field_at(sol, point, backend=backend), H_dir, g)


def edge_point(sol, height):
    """Point ``height`` above the constriction edge at mid-length."""
    return np.array([0.5 * float(sol.geometry.width(0.0)), 0.0, float(height)])


@dataclass(frozen=True, eq=False)
class CouplingResult:
    """Couplings of a deposit; rates in rad/s.

    ``G`` holds per-cell couplings aligned with ``centers``; ``g1_cell`` the
    single-spin coupling at each cell centre. ``G1_max`` is taken over cells
    holding at least one effective spin.
    """

    G: np.ndarray = field(repr=False)
    G_N: float = 0.0
    N_eff: float = 0.0
    G1_avg: float = 0.0
    G1_max: float = 0.0
    H_dir: tuple = LINE_AXIS
    field_T: float = 0.0
    temperature_K: float = 0.0
    N: float = 0.0
    d: float = 0.0
    centers: np.ndarray = field(default=None, repr=False)
    index: np.ndarray = field(default=None, repr=False)
    b: np.ndarray = field(default=None, repr=False)
    g1_cell: np.ndarray = field(default=None, repr=False)

    def summary(self):
        return {
            "G_N_over_2pi_Hz": self.G_N / TWO_PI,
            "G1_avg_over_2pi_Hz": self.G1_avg / TWO_PI,
            "G1_max_over_2pi_Hz": self.G1_max / TWO_PI,
            "N": self.N,
            "N_eff": self.N_eff,
            "H_dir": [float(v) for v in self.H_dir],
            "field_T": self.field_T,
            "temperature_K": self.temperature_K,
            "cell_size_m": self.d,
            "n_cells": int(len(self.G)),
        }

    def write_json(self, path, extra=None):
        doc = self.summary()
        if extra:
            doc.update(extra)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def projection_map(self):
        """Max single-spin coupling over z per occupied column: ``(x, y, G)``."""
        if self.index is None or len(self.G) == 0:
            return np.zeros((0, 3))
        ij = self.index[:, :2]
        lo = ij.min(axis=0)
        shape = tuple(ij.max(axis=0) - lo + 1)
        grid = np.full(shape, -1.0)
        np.maximum.at(grid, (ij[:, 0] - lo[0], ij[:, 1] - lo[1]), self.g1_cell)
        i, j = np.nonzero(grid >= 0)
        x0 = self.centers[:, 0].min() - self.d * (self.index[:, 0].min() - lo[0])
        y0 = self.centers[:, 1].min() - self.d * (self.index[:, 1].min() - lo[1])
        return np.column_stack([x0 + i * self.d, y0 + j * self.d, grid[i, j]])

    def write_map_csv(self, path):
        """Columns x_m, y_m, G_over_2pi_Hz (max projection over z)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x_m", "y_m", "G_over_2pi_Hz"])
            for x, y, G in self.projection_map():
                w.writerow([repr(float(x)), repr(float(y)), repr(float(G / TWO_PI))])


def deposit_fields(dep, sol, theta=DEFAULT_THETA, backend=None):
    """Treecode field (T) at every voxel centre of ``dep``."""
    b = field_points(sol, dep.centers(), theta=theta, backend=backend)
    if np.any(np.isnan(b)):
        raise DomainError("deposit voxels overlap the film volume")
    return b


def couple_deposit(dep, sol, H_dir=LINE_AXIS, species=None, H=None, T=0.0,
                   theta=DEFAULT_THETA, backend=None, b=None):
    """Thermally weighted couplings of a deposit.

    ``H`` defaults to the resonance field of a 1.4 GHz resonator. Pass a
    precomputed ``b`` (from :func:`deposit_fields`) to reuse field evaluations.
    """
    species = SpinSpecies() if species is None else species
    H = resonance_field(ResonatorSpec().omega_r, species.g) if H is None else H
    h = tuple(float(v) for v in _unit(H_dir))
    eff = effective_counts(dep, H, T, species)
    common = dict(H_dir=h, field_T=float(H), temperature_K=float(T), N=dep.total, d=dep.d)
    if dep.n_voxels == 0 or eff.total <= 0:
        warnings.warn("empty deposit or zero polarization; G_N = 0", RuntimeWarning, stacklevel=2)
        return CouplingResult(G=np.zeros(dep.n_voxels), N_eff=eff.total, centers=dep.centers(),
                              index=dep.index, b=b, g1_cell=np.zeros(dep.n_voxels), **common)
    if b is None:
        b = deposit_fields(dep, sol, theta=theta, backend=backend)
    g1 = cell_coupling(1.0, b, h, species.g)
    G = np.sqrt(eff.counts) * g1
    G_N = collective_coupling(G)
    occupied = eff.counts >= 1.0
    return CouplingResult(
        G=G, G_N=G_N, N_eff=eff.total, G1_avg=G_N / math.sqrt(eff.total),
        G1_max=float(g1[occupied].max()) if np.any(occupied) else 0.0,
        centers=dep.centers(), index=dep.index, b=b, g1_cell=g1, **common,
    )


def temperature_curve(dep, sol, H_dir=LINE_AXIS, species=None, H=None, temperatures=(),
                      theta=DEFAULT_THETA, backend=None, b=None):
    """Rows ``(T, polarization, N_eff, G_N)``; the field is evaluated once."""
    species = SpinSpecies() if species is None else species
    H = resonance_field(ResonatorSpec().omega_r, species.g) if H is None else H
    temps = [float(t) for t in temperatures]
    if any(not t > 0 for t in temps):
        raise DomainError("temperatures must be positive")
    if b is None and dep.n_voxels:
        b = deposit_fields(dep, sol, theta=theta, backend=backend)
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for t in temps:
            r = couple_deposit(dep, sol, H_dir, species, H, t, b=b)
            rows.append({"T_K": t, "polarization": spin_polarization(H, t, species.S, species.g),
                         "N_eff": r.N_eff, "G_N": r.G_N})
    return rows


def _sweep_one(args):
    spec, heights, H_dir, g, target_cells, backend = args
    w = spec.constriction_width
    try:
        sol = solve_resonator(spec, target_cells, backend=backend)
    except Exception as exc:  # recorded per point, the sweep continues
        return [{"width_m": w, "z_m": z, "G1": math.nan, "status": f"error: {exc}",
                 "n_cells": 0} for z in heights]
    rows = []
    for z in heights:
        try:
            G1 = single_spin_coupling(sol, (0.0, 0.0, z), H_dir, g, backend)
            status = "ok"
        except Exception as exc:
            G1, status = math.nan, f"error: {exc}"
        rows.append({"width_m": w, "z_m": z, "G1": G1, "status": status,
                     "n_cells": sol.mesh.n_cells})
    return rows


def sweep_width(widths, heights, species=None, template=None, H_dir=LINE_AXIS,
                target_cells=4000, jobs=1, backend=None):
    """Single-spin coupling above the constriction centre for every ``(w, z)``.

    Widths at or above the template line width become uniform lines of that
    width. Rows are sorted by ``(width, z)``; failures carry ``G1 = nan`` and
    the error text in ``status``.
    """
    species = SpinSpecies() if species is None else species
    template = ResonatorSpec() if template is None else template
    widths = sorted({float(w) for w in widths})
    heights = sorted({float(z) for z in heights})
    if not widths or not heights or min(widths) <= 0 or min(heights) <= 0:
        raise DomainError("widths and heights must be non-empty and positive")
    tasks = []
    for w in widths:
        spec = replace(template, constriction_width=w, strip_width=max(template.strip_width, w))
        tasks.append((spec, heights, H_dir, species.g, target_cells, backend))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            chunks = list(ex.map(_sweep_one, tasks))
    else:
        chunks = [_sweep_one(t) for t in tasks]
    return [row for chunk in chunks for row in chunk]
