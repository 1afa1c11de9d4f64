"""Voxelized molecular deposits.

A deposit is a sparse set of cubic voxels of side ``d`` resting on the film
surface ``z = 0``; voxel ``(i, j, k)`` has its centre at
``origin + (i + 1/2, j + 1/2, k + 1/2) * d`` and holds a (fractional) molecule
count. Deposits come from a heightmap (material column above each point of the
plane) or from synthetic hemispherical aggregates, always restricted to an
active rectangle.

Synthetic deposits draw from ``numpy.random.Generator(PCG64(seed))``, which is
bit-reproducible across platforms for a given numpy major version.
"""

from dataclasses import dataclass, field, replace
import csv
import math

import numpy as np
from scipy import sparse

from .core import DomainError, TWO_PI, spin_polarization

DPPH_DENSITY = 2.1e27  # molecules/m^3: 1.4 g/cm^3 bulk, 394.3 g/mol
MIN_COUNT = 1e-6
WIDE_LINE = 1e-6
WIDE_REGION = 30e-6
NARROW_REGION = 2e-6


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned region ``[x0, x1] x [y0, y1]`` (m) in the film plane."""

    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise DomainError(f"degenerate rectangle {self}")

    @classmethod
    def centered(cls, width, height=None, cx=0.0, cy=0.0):
        height = width if height is None else height
        return cls(cx - 0.5 * width, cx + 0.5 * width, cy - 0.5 * height, cy + 0.5 * height)

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    def within(self, other, tol=1e-12):
        return (self.x0 >= other.x0 - tol and self.x1 <= other.x1 + tol
                and self.y0 >= other.y0 - tol and self.y1 <= other.y1 + tol)


@dataclass(frozen=True)
class SpinSpecies:
    """Spin parameters of the deposited molecules (DPPH defaults).

    ``gamma`` is the homogeneous half-width in rad/s. The default reads
    ``1/T2`` with ``T2 = 80 ns`` as an ordinary frequency, so
    ``gamma / 2pi = 12.5 MHz``. ``efficiency`` is the paramagnetic fraction.
    """

    g: float = 2.0
    S: float = 0.5
    gamma: float = TWO_PI * 12.5e6
    T2: float = 80e-9
    molecular_density: float = DPPH_DENSITY
    efficiency: float = 1.0

    def __post_init__(self):
        if not (self.g > 0 and self.S > 0 and self.gamma > 0 and self.molecular_density > 0):
            raise DomainError("g, S, gamma and molecular_density must be positive")
        if not 0 <= self.efficiency <= 1:
            raise DomainError("efficiency must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class Heightmap:
    """Material height ``heights[j, i]`` (m) over pixel ``(i, j)``.

    Pixel ``(i, j)`` covers ``[x0 + i dx, x0 + (i+1) dx] x [y0 + j dy, ...]``.
    """

    dx: float
    dy: float
    x0: float
    y0: float
    heights: np.ndarray = field(repr=False)

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=float)
        if h.ndim != 2 or h.size == 0:
            raise DomainError("heights must be a non-empty 2D array")
        if not (self.dx > 0 and self.dy > 0):
            raise DomainError("pixel sizes must be positive")
        if not np.all(np.isfinite(h)) or np.any(h < 0):
            raise DomainError("heights must be finite and non-negative")
        object.__setattr__(self, "heights", h)

    @property
    def nx(self):
        return self.heights.shape[1]

    @property
    def ny(self):
        return self.heights.shape[0]

    @property
    def extent(self):
        return Rectangle(self.x0, self.x0 + self.nx * self.dx, self.y0, self.y0 + self.ny * self.dy)

    def volume(self):
        return float(self.heights.sum()) * self.dx * self.dy

    def write(self, path):
        """ASCII format: header ``nx ny dx dy x0 y0`` then ``ny`` rows of ``nx`` heights."""
        with open(path, "w") as fh:
            fh.write(" ".join([str(self.nx), str(self.ny)] + [repr(float(v)) for v in
                                                             (self.dx, self.dy, self.x0, self.y0)]) + "\n")
            for row in self.heights:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def read(cls, path):
        try:
            with open(path) as fh:
                lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        except FileNotFoundError:
            raise FileNotFoundError(f"heightmap file not found: {path}") from None
        if not lines:
            raise DomainError(f"{path}: empty heightmap file")
        head = lines[0].split()
        if len(head) != 6:
            raise DomainError(f"{path}:1: header must be 'nx ny dx dy x0 y0'")
        nx, ny = int(head[0]), int(head[1])
        dx, dy, x0, y0 = (float(v) for v in head[2:])
        if len(lines) - 1 != ny:
            raise DomainError(f"{path}: expected {ny} rows, found {len(lines) - 1}")
        rows = []
        for n, ln in enumerate(lines[1:], start=2):
            vals = ln.split()
            if len(vals) != nx:
                raise DomainError(f"{path}:{n}: expected {nx} values, found {len(vals)}")
            rows.append([float(v) for v in vals])
        return cls(dx, dy, x0, y0, np.array(rows))


@dataclass(frozen=True, eq=False)
class Deposit:
    """Sparse voxel deposit.

    ``index`` is ``(m, 3)`` integer voxel indices, ``counts`` the molecule
    counts (or effective spin counts after :func:`effective_counts`).
    """

    d: float
    origin: np.ndarray
    index: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)
    region: Rectangle = None
    polarization: float = 1.0

    @property
    def n_voxels(self):
        return len(self.counts)

    @property
    def total(self):
        return float(np.sum(self.counts))

    def centers(self):
        return np.asarray(self.origin, float) + (self.index + 0.5) * self.d

    def scaled(self, k):
        """Uniformly scaled counts (``k >= 0``)."""
        if k < 0:
            raise DomainError("scale factor must be non-negative")
        return replace(self, counts=self.counts * float(k))

    def calibrated(self, total):
        """Counts rescaled so that they sum to ``total``."""
        if self.total <= 0:
            raise DomainError("cannot calibrate an empty deposit")
        return self.scaled(total / self.total)

    def write_csv(self, path):
        """Columns x_m, y_m, z_m, n_molecules (one row per stored voxel)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x_m", "y_m", "z_m", "n_molecules"])
            for c, n in zip(self.centers(), self.counts):
                w.writerow([repr(float(c[0])), repr(float(c[1])), repr(float(c[2])), repr(float(n))])


def default_active_region(line_width, cx=0.0, cy=0.0):
    """Square region holding the counted spins: 30 um for ``w >= 1 um``, else 2 um."""
    if not line_width > 0:
        raise DomainError("line_width must be positive")
    size = WIDE_REGION if line_width >= WIDE_LINE else NARROW_REGION
    return Rectangle.centered(size, size, cx, cy)


def _overlap(lo, n, d, edges):
    """Sparse ``(n, len(edges)-1)`` matrix of 1D overlap lengths."""
    vlo = lo + d * np.arange(n)
    vhi = vlo + d
    rows, cols, vals = [], [], []
    for p in range(len(edges) - 1):
        a, b = edges[p], edges[p + 1]
        i0 = max(int(math.floor((a - lo) / d)) - 1, 0)
        i1 = min(int(math.ceil((b - lo) / d)) + 1, n)
        if i1 <= i0:
            continue
        i = np.arange(i0, i1)
        ov = np.minimum(vhi[i], b) - np.maximum(vlo[i], a)
        keep = ov > 0
        rows.append(i[keep])
        cols.append(np.full(int(keep.sum()), p))
        vals.append(ov[keep])
    if not rows:
        return sparse.csr_matrix((n, len(edges) - 1))
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, len(edges) - 1))


def _voxel_grid(region, d):
    if d > region.width or d > region.height:
        raise DomainError(f"cell size {d!r} larger than the active region {region}")
    nx = int(math.ceil(region.width / d - 1e-9))
    ny = int(math.ceil(region.height / d - 1e-9))
    # centred, so the overhang is below d/2 per side and every centre is inside
    ox = region.x0 + 0.5 * (region.width - nx * d)
    oy = region.y0 + 0.5 * (region.height - ny * d)
    return nx, ny, ox, oy


def voxelize(hm, species, d, active_region=None):
    """Slice the material column above the active region into cubes of side ``d``.

    Each voxel receives ``density * overlap volume`` molecules, computed
    exactly for the piecewise-constant heightmap clipped to the region (area overlap in x and y is
    separable, the vertical overlap is a clip). Voxels below ``1e-6``
    molecules are not stored.
    """
    if not d > 0:
        raise DomainError("cell size d must be positive")
    region = hm.extent if active_region is None else active_region
    if not region.within(hm.extent):
        raise DomainError(f"active region {region} exceeds heightmap extent {hm.extent}")
    nx, ny, ox, oy = _voxel_grid(region, d)
    # only material inside the region is counted
    Wx = _overlap(ox, nx, d, np.clip(hm.x0 + hm.dx * np.arange(hm.nx + 1), region.x0, region.x1))
    Wy = _overlap(oy, ny, d, np.clip(hm.y0 + hm.dy * np.arange(hm.ny + 1), region.y0, region.y1))
    H = hm.heights
    nz = int(math.ceil(H.max() / d)) if H.size else 0
    rho = species.molecular_density
    idx, cnt = [], []
    for k in range(nz):
        slab = np.clip(H - k * d, 0.0, d)
        if not slab.any():
            break
        layer = rho * (Wy @ (Wx @ slab.T).T)
        j, i = np.nonzero(layer >= MIN_COUNT)
        idx.append(np.column_stack([i, j, np.full(len(i), k)]))
        cnt.append(layer[j, i])
    if idx:
        index = np.concatenate(idx).astype(np.int64)
        counts = np.concatenate(cnt)
    else:
        index = np.zeros((0, 3), dtype=np.int64)
        counts = np.zeros(0)
    return Deposit(d=float(d), origin=np.array([ox, oy, 0.0]), index=index, counts=counts, region=region)


def aggregate_heightmap(centers, radii, region, pixel):
    """Heightmap of hemispherical caps; overlaps take the larger height."""
    nx = max(int(math.ceil(region.width / pixel - 1e-9)), 1)
    ny = max(int(math.ceil(region.height / pixel - 1e-9)), 1)
    dx, dy = region.width / nx, region.height / ny
    xs = region.x0 + (np.arange(nx) + 0.5) * dx
    ys = region.y0 + (np.arange(ny) + 0.5) * dy
    H = np.zeros((ny, nx))
    for (cx, cy), r in zip(centers, radii):
        i0, i1 = np.searchsorted(xs, [cx - r, cx + r])
        j0, j1 = np.searchsorted(ys, [cy - r, cy + r])
        if i1 <= i0 or j1 <= j0:
            continue
        rho2 = (xs[i0:i1][None, :] - cx) ** 2 + (ys[j0:j1][:, None] - cy) ** 2
        cap = np.sqrt(np.maximum(r * r - rho2, 0.0))
        np.maximum(H[j0:j1, i0:i1], cap, out=H[j0:j1, i0:i1])
    return Heightmap(dx, dy, region.x0, region.y0, H)


def synthetic_aggregates(seed, region, count, radius_range, species, d, active_region=None,
                         oversample=2):
    """Deposit of ``count`` random hemispherical caps.

    Centres are uniform in ``region`` and radii uniform in ``radius_range``,
    both drawn from ``Generator(PCG64(seed))``. Caps are rasterized at
    ``d / oversample`` and voxelized over ``active_region`` (default: ``region``).
    """
    r_lo, r_hi = (float(v) for v in radius_range)
    if not (10e-9 <= r_lo <= r_hi <= 1e-6):
        raise DomainError("radius_range must lie within [10 nm, 1 um]")
    if count < 0:
        raise DomainError("count must be non-negative")
    active = region if active_region is None else active_region
    rng = np.random.Generator(np.random.PCG64(seed))
    cx = rng.uniform(region.x0, region.x1, count)
    cy = rng.uniform(region.y0, region.y1, count)
    radii = rng.uniform(r_lo, r_hi, count)
    hm = aggregate_heightmap(np.column_stack([cx, cy]), radii, active, d / oversample)
    return voxelize(hm, species, d, active)


def effective_counts(dep, H, T, species):
    """Counts weighted by the thermal polarization and the paramagnetic fraction."""
    p = spin_polarization(H, T, species.S, species.g) * species.efficiency
    return replace(dep, counts=dep.counts * p, polarization=dep.polarization * p)
