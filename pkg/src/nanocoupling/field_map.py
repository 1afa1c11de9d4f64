"""Magnetic field of a sheet-current solution at points and on 3D grids.

Sources are the mesh cells of every sheet plus the two leads, each a
rectangular panel of uniform sheet current integrated in closed form. Points
inside the film volume (``-t <= z <= 0`` above the outline or a lead) are
rejected by :func:`field_at` and flagged (``NaN``) by :func:`field_grid`.

Grid nodes are cell centres: along each axis node ``i`` sits at
``lo + (i + 1/2) * spacing``, so a grid starting at the film surface has its
first layer at ``z = spacing / 2``.
"""

from dataclasses import dataclass, field
import csv
import hashlib
import math
import weakref

import numpy as np

from .core import MU_0, DomainError
from .kernels.biot_savart import SourceTree, direct_field, tree_field, DEFAULT_THETA

MU0_4PI = MU_0 / (4.0 * math.pi)
NPZ_VERSION = 1

_trees = weakref.WeakKeyDictionary()


@dataclass(frozen=True, eq=False)
class FieldMap:
    """rms field ``b`` (T) on a regular grid of cell-centred nodes.

    ``b`` has shape ``(nx, ny, nz, 3)``; nodes inside the film hold ``NaN``
    and are marked in ``inside``.
    """

    origin: np.ndarray
    spacing: np.ndarray
    shape: tuple
    b: np.ndarray = field(repr=False)
    inside: np.ndarray = field(repr=False)
    source_id: str = ""

    def axes(self):
        return [self.origin[a] + (np.arange(self.shape[a]) + 0.5) * self.spacing[a] for a in range(3)]

    def points(self):
        X, Y, Z = np.meshgrid(*self.axes(), indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    @property
    def magnitude(self):
        return np.linalg.norm(self.b, axis=-1)

    @property
    def node_volume(self):
        return float(np.prod(self.spacing))

    def write_csv(self, path):
        """Columns x_m, y_m, z_m, bx_T, by_T, bz_T; film nodes are skipped."""
        pts = self.points()
        b = self.b.reshape(-1, 3)
        keep = ~self.inside.ravel()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x_m", "y_m", "z_m", "bx_T", "by_T", "bz_T"])
            for p, v in zip(pts[keep], b[keep]):
                w.writerow([repr(float(a)) for a in (*p, *v)])

    def save(self, path):
        """Versioned binary round trip (``.npz``)."""
        np.savez(path, version=NPZ_VERSION, origin=self.origin, spacing=self.spacing,
                 shape=np.array(self.shape), b=self.b, inside=self.inside,
                 source_id=np.array(self.source_id))

    @classmethod
    def load(cls, path):
        with np.load(path) as d:
            if int(d["version"]) != NPZ_VERSION:
                raise ValueError(f"unsupported field map version {int(d['version'])}")
            return cls(origin=d["origin"], spacing=d["spacing"], shape=tuple(int(s) for s in d["shape"]),
                       b=d["b"], inside=d["inside"], source_id=str(d["source_id"]))


def source_id(sol):
    """Short content hash of a solution's geometry and currents."""
    h = hashlib.sha256()
    g = sol.geometry
    h.update(repr((g.strip_width, g.constriction_width, g.constriction_length, g.taper_length,
                   g.thickness, g.simulated_line_length, g.lambda_L, sol.lead_length)).encode())
    for a in (sol.mesh.xc, sol.mesh.yc, sol.Kx, sol.Ky, sol.weights):
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    return h.hexdigest()[:16]


def inside_film(sol, points):
    """Boolean mask of points within the film volume (segment or leads)."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    g = sol.geometry
    in_z = (p[:, 2] >= -g.thickness) & (p[:, 2] <= 0.0)
    ay = np.abs(p[:, 1])
    in_seg = g.contains(p[:, 0], np.minimum(ay, g.half_length)) & (ay <= g.half_length)
    w_end = float(g.width(g.half_length))
    in_lead = (ay > g.half_length) & (ay <= g.half_length + sol.lead_length) & (np.abs(p[:, 0]) <= 0.5 * w_end)
    return in_z & (in_seg | in_lead)


def _tree(sol):
    tree = _trees.get(sol)
    if tree is None:
        xc, yc, hx, hy, Kx, Ky = sol.source_panels()
        tree = SourceTree(xc, yc, hx, hy, Kx, Ky, sol.sheets.z, sol.weights)
        _trees[sol] = tree
    return tree


def field_at(sol, r, backend=None):
    """Exact field (T) at point(s) ``r``; shape ``(3,)`` or ``(n, 3)``.

    Raises :class:`DomainError` for points inside the film volume; move probe
    grids to cell-centre heights (``z >= d/2``) instead.
    """
    pts = np.atleast_2d(np.asarray(r, dtype=float))
    bad = inside_film(sol, pts)
    if np.any(bad):
        raise DomainError(
            f"{int(bad.sum())} point(s) inside the film volume, e.g. {pts[bad][0].tolist()}; "
            "offset probes to cell-centre heights above the surface"
        )
    xc, yc, hx, hy, Kx, Ky = sol.source_panels()
    b = MU0_4PI * direct_field(pts, xc, yc, hx, hy, Kx, Ky, sol.sheets.z, sol.weights, backend=backend)
    return b[0] if np.ndim(r) == 1 else b


def field_points(sol, points, theta=DEFAULT_THETA, backend=None):
    """Treecode field (T) at many points; film-volume points give ``NaN``."""
    pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
    out = np.full((len(pts), 3), np.nan)
    ok = ~inside_film(sol, pts)
    if sol.total_current == 0:
        out[ok] = 0.0
        return out
    if np.any(ok):
        out[ok] = MU0_4PI * tree_field(pts[ok], _tree(sol), theta=theta, backend=backend)
    return out


def grid_axis(lo, hi, spacing):
    """Number of cell-centred nodes covering ``[lo, hi]``."""
    n = int(round((hi - lo) / spacing))
    if n < 1:
        raise DomainError(f"box extent {hi - lo!r} smaller than spacing {spacing!r}")
    return n


def field_grid(sol, box, spacing, theta=DEFAULT_THETA, backend=None):
    """Field on the cell-centred grid filling ``box = ((x0, x1), (y0, y1), (z0, z1))``.

    ``spacing`` is a scalar or a 3-vector (m). Nodes inside the film are
    flagged, not errored.
    """
    sp_ = np.broadcast_to(np.asarray(spacing, dtype=float), (3,)).copy()
    if np.any(sp_ <= 0):
        raise DomainError("spacing must be positive")
    lo = np.array([b[0] for b in box], dtype=float)
    shape = tuple(grid_axis(b[0], b[1], s) for b, s in zip(box, sp_))
    fm = FieldMap(origin=lo, spacing=sp_, shape=shape, b=np.empty(0), inside=np.empty(0))
    pts = fm.points()
    b = field_points(sol, pts, theta=theta, backend=backend)
    inside = np.isnan(b[:, 0])
    return FieldMap(origin=lo, spacing=sp_, shape=shape, b=b.reshape(*shape, 3),
                    inside=inside.reshape(shape), source_id=source_id(sol))


def mode_volume(fmap, threshold_fraction):
    """Volume (m^3) of nodes with ``|b| >= threshold_fraction * max |b|``.

    The peak is the largest node value, so the result depends on the grid
    spacing near the constriction as well as on the box; compare volumes only
    between maps of equal spacing.
    """
    if not 0 < threshold_fraction < 1:
        raise DomainError("threshold_fraction must lie in (0, 1)")
    mag = fmap.magnitude
    valid = ~fmap.inside
    if mag.size == 0 or not np.any(valid):
        raise DomainError("empty field map")
    peak = np.max(mag[valid])
    count = int(np.count_nonzero(valid & (mag >= threshold_fraction * peak)))
    return count * fmap.node_volume
