"""Film layout (strip, linear tapers, constriction), its mesh and sheet stack.

Coordinates: the line runs along ``y``, its width is along ``x``, and the
constriction is centred on the origin. The film occupies ``-t <= z <= 0`` so
that ``z = 0`` is the top surface on which deposits rest.

The mesh is a mapped grid made of horizontal rows. Every row has the same
number of columns, spaced in the normalised coordinate ``u = 2x / W(y)``, and
row boundaries always include the taper kinks. Each cell is stored as the
axis-aligned rectangle whose width is the local film width at the row
centre. Because ``W`` is linear inside a row, the rectangles reproduce the
polygon area exactly.
"""

from dataclasses import dataclass, field, asdict
import math
from pathlib import Path

import numpy as np
import yaml

from .core import TWO_PI, DomainError


class GeometryError(ValueError):
    """Invalid film geometry or mesh request."""


@dataclass(frozen=True)
class ResonatorSpec:
    """Electrical parameters of the resonator and its film layout (SI, rad/s)."""

    omega_r: float = TWO_PI * 1.4e9
    Z0: float = 50.0
    kappa_r: float = TWO_PI * 50e3
    strip_width: float = 14e-6
    constriction_width: float = 14e-6
    constriction_length: float = 0.0
    taper_length: float = 2e-6
    thickness: float = 150e-9
    lambda_L: float = 90e-9
    n_sheets: int = 11
    simulated_line_length: float = 20e-6


# config key -> (attribute, scale applied to the file value)
CONFIG_KEYS = {
    "omega_r_hz": ("omega_r", TWO_PI),
    "z0_ohm": ("Z0", 1.0),
    "kappa_r_hz": ("kappa_r", TWO_PI),
    "strip_width_m": ("strip_width", 1.0),
    "constriction_width_m": ("constriction_width", 1.0),
    "constriction_length_m": ("constriction_length", 1.0),
    "taper_length_m": ("taper_length", 1.0),
    "thickness_m": ("thickness", 1.0),
    "lambda_l_m": ("lambda_L", 1.0),
    "n_sheets": ("n_sheets", 1),
    "simulated_line_length_m": ("simulated_line_length", 1.0),
}


def spec_from_mapping(data):
    """Build a :class:`ResonatorSpec` from a flat key/value mapping.

    Unknown keys raise, naming the key; missing keys take the defaults.
    """
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise GeometryError(f"unknown resonator config key(s): {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        attr, scale = CONFIG_KEYS[key]
        try:
            if attr == "n_sheets":
                kwargs[attr] = int(value)
            else:
                kwargs[attr] = float(value) * scale
        except (TypeError, ValueError) as exc:
            raise GeometryError(f"config key {key!r}: not a number ({value!r})") from exc
    return ResonatorSpec(**kwargs)


def spec_to_mapping(spec):
    out = {}
    values = asdict(spec)
    for key, (attr, scale) in CONFIG_KEYS.items():
        out[key] = values[attr] / scale if attr != "n_sheets" else values[attr]
    return out


def load_spec(path):
    """Read a resonator spec from a YAML key/value file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"resonator config not found: {path}")
    data = yaml.safe_load(path.read_text()) or {}
    if not isinstance(data, dict):
        raise GeometryError(f"{path}: expected a key/value mapping")
    return spec_from_mapping(data)


@dataclass(frozen=True)
class FilmGeometry:
    """Hourglass outline: strip of width ``w`` necked down to ``w_c`` over ``L``."""

    strip_width: float
    constriction_width: float
    constriction_length: float
    taper_length: float
    thickness: float
    simulated_line_length: float
    lambda_L: float

    def __post_init__(self):
        if not 0 < self.constriction_width <= self.strip_width:
            raise GeometryError(
                f"need 0 < constriction_width <= strip_width, got "
                f"{self.constriction_width!r} > {self.strip_width!r}"
            )
        if self.constriction_length < 0 or self.taper_length < 0:
            raise GeometryError("constriction and taper lengths must be >= 0")
        if not self.thickness > 0 or not self.lambda_L > 0:
            raise GeometryError("thickness and lambda_L must be positive")
        if self.half_length <= self.neck_half_length:
            raise GeometryError("simulated_line_length too short for constriction + tapers")

    @property
    def is_uniform(self):
        return self.constriction_width == self.strip_width

    @property
    def half_length(self):
        return 0.5 * self.simulated_line_length

    @property
    def neck_half_length(self):
        if self.is_uniform:
            return 0.0
        return 0.5 * self.constriction_length + self.taper_length

    def kinks(self):
        """Positive y-coordinates where the outline changes slope."""
        if self.is_uniform:
            return []
        a = 0.5 * self.constriction_length
        pts = [a, a + self.taper_length] if self.taper_length > 0 else [a]
        return [p for p in pts if p > 0]

    def width(self, y):
        """Film width W(y); linear inside the tapers."""
        y = np.abs(np.asarray(y, dtype=float))
        if self.is_uniform:
            return np.full_like(y, self.strip_width)
        a = 0.5 * self.constriction_length
        b = a + self.taper_length
        w, wc = self.strip_width, self.constriction_width
        if self.taper_length == 0:
            return np.where(y <= a, wc, w)
        frac = np.clip((y - a) / self.taper_length, 0.0, 1.0)
        return np.where(y <= a, wc, np.where(y >= b, w, wc + (w - wc) * frac))

    def contains(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return (np.abs(y) <= self.half_length) & (np.abs(x) <= 0.5 * self.width(y))

    def outline(self):
        """Closed polygon vertices (counter-clockwise), shape (n, 2)."""
        ys = sorted({0.0, *self.kinks(), self.half_length})
        right = [(0.5 * float(self.width(y)), y) for y in ys]
        right = [(x, -y) for x, y in reversed(right[1:])] + right
        left = [(-x, y) for x, y in reversed(right)]
        return np.array(right + left)

    def area(self):
        """Exact polygon area (shoelace)."""
        p = self.outline()
        x, y = p[:, 0], p[:, 1]
        return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def build_geometry(spec):
    """Film geometry for a :class:`ResonatorSpec` (validates the invariants)."""
    L = spec.constriction_length if spec.constriction_width < spec.strip_width else 0.0
    return FilmGeometry(
        strip_width=spec.strip_width,
        constriction_width=spec.constriction_width,
        constriction_length=L,
        taper_length=spec.taper_length,
        thickness=spec.thickness,
        simulated_line_length=spec.simulated_line_length,
        lambda_L=spec.lambda_L,
    )


@dataclass(frozen=True)
class SheetStack:
    """Equidistant current sheets through the film thickness.

    ``z`` runs from the bottom surface ``-t`` to the top surface ``0``.
    """

    n_sheets: int
    thickness: float
    z: np.ndarray = field(repr=False)

    @classmethod
    def equidistant(cls, thickness, n_sheets=11):
        if n_sheets < 1:
            raise GeometryError("n_sheets must be >= 1")
        if n_sheets == 1:
            z = np.array([-0.5 * thickness])
        else:
            z = np.linspace(-thickness, 0.0, n_sheets)
        return cls(n_sheets=n_sheets, thickness=thickness, z=z)

    def screening_weights(self, lambda_L):
        """Through-thickness current split: cosh profile about the mid-plane, sum 1."""
        zc = self.z + 0.5 * self.thickness
        w = np.cosh(zc / lambda_L)
        return w / w.sum()


@dataclass(frozen=True, eq=False)
class Mesh:
    """Mapped row mesh of a :class:`FilmGeometry`.

    Node ``(j, i)`` sits at ``(u[i] * W(y_edges[j]) / 2, y_edges[j])``.
    Cell ``(j, i)`` (flattened row-major as ``j * nx + i``) is the rectangle
    with centre ``(xc, yc)`` and sides ``(hx, hy)``.
    """

    u: np.ndarray
    y_edges: np.ndarray
    xc: np.ndarray
    yc: np.ndarray
    hx: np.ndarray
    hy: np.ndarray
    node_x: np.ndarray
    node_y: np.ndarray
    geometry: FilmGeometry

    @property
    def nx(self):
        return len(self.u) - 1

    @property
    def ny(self):
        return len(self.y_edges) - 1

    @property
    def n_cells(self):
        return self.nx * self.ny

    @property
    def area(self):
        return self.hx * self.hy

    @property
    def boundary(self):
        """True for cells touching the film edge (first or last column)."""
        col = np.tile(np.arange(self.nx), self.ny)
        return (col == 0) | (col == self.nx - 1)

    def row_of(self, y):
        if abs(y) > self.geometry.half_length:
            raise DomainError(f"y={y!r} outside the simulated line")
        j = int(np.searchsorted(self.y_edges, y, side="right") - 1)
        return min(max(j, 0), self.ny - 1)

    def min_cell_near_constriction(self, radius=None):
        g = self.geometry
        radius = g.constriction_length / 2 + g.constriction_width if radius is None else radius
        near = np.abs(self.yc) <= radius
        return float(np.min(np.minimum(self.hx, self.hy)[near]))


def _column_edges(nx, blend=0.6):
    """Column edges in u = 2x/W: a blend of uniform and cosine spacing (edge refined)."""
    s = np.arange(nx + 1) / nx
    cosine = -np.cos(np.pi * s)
    u = (1 - blend) * (2 * s - 1) + blend * cosine
    u[0], u[-1] = -1.0, 1.0
    u = 0.5 * (u - u[::-1])  # exact antisymmetry
    return u


def _row_edges(geom, rel_row, max_row, slope_frac=0.2):
    """Positive-half row edges from y=0 outwards; rows never straddle a kink."""
    kinks = geom.kinks()
    slope = 0.0
    if not geom.is_uniform and geom.taper_length > 0:
        slope = (geom.strip_width - geom.constriction_width) / geom.taper_length
    stops = sorted(set([*kinks, geom.half_length]))
    edges = [0.0]
    y = 0.0
    for stop in stops:
        while y < stop - 1e-15 * geom.half_length:
            W = float(geom.width(y + 1e-30 if y < stop else y))
            h = rel_row * W
            if slope > 0 and geom.taper_length > 0:
                a = 0.5 * geom.constriction_length
                if a <= y < a + geom.taper_length:
                    h = min(h, max(slope_frac * W / slope, geom.constriction_width / 8))
            h = min(h, max_row)
            if y > 0:
                h = min(h, 1.5 * (edges[-1] - edges[-2]))
            n_left = (stop - y) / h
            if n_left <= 1.0:
                y = stop
            elif n_left < 2.0:
                y = y + 0.5 * (stop - y)
            else:
                y = y + h
            edges.append(y)
        y = stop
    return np.array(edges)


def mesh_geometry(geom, target_cells=4000, blend=0.6):
    """Deterministic graded mesh with roughly ``target_cells`` cells.

    Raises :class:`GeometryError` if the target cannot satisfy the refinement
    bound (minimum cell <= constriction width / 8) and the 100-cell floor.
    """
    if target_cells < 100:
        raise GeometryError(f"target_cells={target_cells} below the minimum of 100")

    def build(scale):
        nx = max(8, int(round(8 * scale)))
        if nx % 2:
            nx += 1
        rel = 0.5 / scale
        max_row = max(rel * geom.strip_width, geom.half_length / 40)
        half = _row_edges(geom, rel, max_row)
        return nx, half

    lo, hi = 0.25, 64.0
    best = None
    for _ in range(40):
        mid = math.sqrt(lo * hi)
        nx, half = build(mid)
        cells = nx * 2 * (len(half) - 1)
        best = (nx, half, cells)
        if cells > target_cells:
            hi = mid
        else:
            lo = mid
    nx, half, cells = best
    if cells > 1.25 * target_cells:
        nx, half = build(lo)
    y_edges = np.concatenate([-half[::-1], half[1:]])
    u = _column_edges(nx, blend)
    mesh = _assemble(geom, u, y_edges)
    limit = geom.constriction_width / 8
    if mesh.min_cell_near_constriction() > limit * (1 + 1e-12):
        raise GeometryError(
            f"target_cells={target_cells} too small: minimum cell near the constriction "
            f"{mesh.min_cell_near_constriction():.3e} m exceeds w_c/8 = {limit:.3e} m"
        )
    return mesh


def _assemble(geom, u, y_edges):
    yc = 0.5 * (y_edges[:-1] + y_edges[1:])
    Wc = geom.width(yc)
    hy_row = np.diff(y_edges)
    du = np.diff(u)
    uc = 0.5 * (u[:-1] + u[1:])
    xc = (uc[None, :] * 0.5 * Wc[:, None]).ravel()
    hx = (du[None, :] * 0.5 * Wc[:, None]).ravel()
    ycc = np.repeat(yc, len(du))
    hy = np.repeat(hy_row, len(du))
    We = geom.width(y_edges)
    node_x = u[None, :] * 0.5 * We[:, None]
    node_y = np.repeat(y_edges[:, None], len(u), axis=1)
    return Mesh(u=u, y_edges=y_edges, xc=xc, yc=ycc, hx=hx, hy=hy,
                node_x=node_x, node_y=node_y, geometry=geom)


def mesh_from_edges(geom, u, y_edges):
    """Mesh from explicit column (normalised) and row edges; used by refinement studies."""
    u = np.asarray(u, dtype=float)
    y_edges = np.asarray(y_edges, dtype=float)
    return _assemble(geom, u, y_edges)
