"""London-screened sheet current in the film, via a stream function.

The transported current is written as ``K = curl(psi z_hat)`` with a nodal,
bilinear stream function ``psi`` on the mapped row mesh. ``psi`` is fixed to
``I`` on the left film edge and ``0`` on the right one, so no current leaves
through the sides and every transverse cut carries exactly ``I``. ``psi`` is
found by minimising the magnetic plus kinetic energy

    E = 1/2 sum_cc' A_c A_c' K_c . K_c' P_cc' / 4 pi  +  1/2 Lambda_eff sum_c A_c |K_c|^2

(lengths in m, ``mu_0`` factored out), where ``P`` is the sheet-weighted mean
inverse distance between cells (:mod:`.kernels.inductance`). The current is
split over the sheet stack with fixed weights ``w_k``, so the kinetic term of
the stack collapses to ``Lambda_eff = Lambda * sum_k w_k^2`` with the per-sheet
``Lambda = lambda_L^2 / (t / n_sheets)``.

The simulated segment is the middle of a long line. Its two end rows are
pinned to the current profile of the infinite uniform strip (a 1D problem
with the same kernel), and that profile continues along straight leads of
length ``LEAD_LENGTH`` beyond each end. The leads couple to the segment
through their vector potential and are part of the field sources.
"""

from dataclasses import dataclass, field
import csv
import math

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .core import DomainError, rms_supercurrent
from .geometry import Mesh, SheetStack, FilmGeometry, build_geometry, mesh_geometry
from .kernels.inductance import mean_inverse_distance, sheet_offsets

LEAD_LENGTH = 1.0  # m, long enough to act as an infinite continuation
LEAD_RATIO = 1.4  # geometric growth of lead segments used as field sources
_G3_X = np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)]) * 0.5
_G3_W = np.array([5.0, 8.0, 5.0]) / 18.0


class SolverError(RuntimeError):
    """The stream-function system could not be solved."""


@dataclass(frozen=True, eq=False)
class SheetCurrentSolution:
    """Sheet current on a mesh, shared by all sheets up to their weights.

    ``Kx``, ``Ky`` (A/m) are the stack totals per cell; sheet ``k`` carries
    ``weights[k] * K``. ``lead_Ky`` is the sheet current of each column in
    the two leads (the infinite-strip profile).
    """

    mesh: Mesh
    sheets: SheetStack
    weights: np.ndarray
    psi: np.ndarray = field(repr=False)
    Kx: np.ndarray = field(repr=False)
    Ky: np.ndarray = field(repr=False)
    lead_Ky: np.ndarray = field(repr=False)
    total_current: float
    Lambda: float
    Lambda_eff: float
    lead_length: float = LEAD_LENGTH

    @property
    def geometry(self):
        return self.mesh.geometry

    def sheet_current(self, k):
        """``(jx, jy)`` in A/m on sheet ``k``."""
        return self.weights[k] * self.Kx, self.weights[k] * self.Ky

    def scaled(self, factor):
        """The same solution carrying ``factor`` times the current (exact)."""
        return SheetCurrentSolution(
            mesh=self.mesh, sheets=self.sheets, weights=self.weights,
            psi=self.psi * factor, Kx=self.Kx * factor, Ky=self.Ky * factor,
            lead_Ky=self.lead_Ky * factor, total_current=self.total_current * factor,
            Lambda=self.Lambda, Lambda_eff=self.Lambda_eff, lead_length=self.lead_length,
        )

    def lead_panels(self):
        """Lead sources as geometrically growing segments (xc, yc, hx, hy, Kx, Ky)."""
        mesh = self.mesh
        if self.lead_length <= 0:
            e = np.empty(0)
            return e, e, e, e, e, e
        y_end = mesh.y_edges[-1]
        first = mesh.y_edges[-1] - mesh.y_edges[-2]
        edges = [0.0]
        h = first
        while edges[-1] < self.lead_length:
            edges.append(min(edges[-1] + h, self.lead_length))
            h *= LEAD_RATIO
        edges = np.array(edges)
        seg_c = 0.5 * (edges[:-1] + edges[1:])
        seg_h = np.diff(edges)
        W = float(self.geometry.width(y_end))
        du = np.diff(mesh.u)
        uc = 0.5 * (mesh.u[:-1] + mesh.u[1:])
        col_x = uc * 0.5 * W
        col_h = du * 0.5 * W
        xs, ys, hxs, hys, kys = [], [], [], [], []
        for sgn in (-1.0, 1.0):
            for c, hseg in zip(seg_c, seg_h):
                xs.append(col_x)
                ys.append(np.full_like(col_x, sgn * (y_end + c)))
                hxs.append(col_h)
                hys.append(np.full_like(col_x, hseg))
                kys.append(self.lead_Ky)
        xs, ys, hxs, hys, kys = (np.concatenate(a) for a in (xs, ys, hxs, hys, kys))
        return xs, ys, hxs, hys, np.zeros_like(kys), kys

    def source_panels(self, include_leads=True):
        """All field sources: mesh cells followed by lead segments."""
        m = self.mesh
        cells = (m.xc, m.yc, m.hx, m.hy, self.Kx, self.Ky)
        if not include_leads:
            return cells
        leads = self.lead_panels()
        return tuple(np.concatenate([a, b]) for a, b in zip(cells, leads))

    def boundary_normal_ratio(self):
        """Max ``|K.n| / |K|`` at the midpoints of the film-edge faces."""
        return boundary_normal_ratio(self)

    def write_csv(self, path):
        """Per-sheet dump: x_m, y_m, sheet_index, jx_A_per_m, jy_A_per_m."""
        m = self.mesh
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x_m", "y_m", "sheet_index", "jx_A_per_m", "jy_A_per_m"])
            for k in range(self.sheets.n_sheets):
                jx, jy = self.sheet_current(k)
                for c in range(m.n_cells):
                    w.writerow([repr(float(m.xc[c])), repr(float(m.yc[c])), k,
                                repr(float(jx[c])), repr(float(jy[c]))])


def penetration_parameters(geom: FilmGeometry, sheets: SheetStack):
    """``(Lambda, Lambda_eff, weights)`` for a film and its sheet stack."""
    weights = sheets.screening_weights(geom.lambda_L)
    Lam = geom.lambda_L ** 2 / (geom.thickness / sheets.n_sheets)
    return Lam, Lam * float(np.sum(weights ** 2)), weights


# ---------------------------------------------------------------------------
# infinite uniform strip (1D)
# ---------------------------------------------------------------------------


def _g2(t, a):
    # second antiderivative of log(sqrt(t^2 + a^2)) in t
    t = np.asarray(t, dtype=float)
    t2 = t * t
    with np.errstate(divide="ignore", invalid="ignore"):
        lg = np.where(t2 + a * a > 0, np.log(t2 + a * a), 0.0)
        at = a * t * np.arctan(t / a) if a > 0 else np.zeros_like(t)
    return at - 0.75 * t2 + 0.25 * (t2 - a * a) * lg


def mean_log_distance(x_lo, x_hi, dz, cm):
    """Sheet-weighted mean of ``log(rho)`` between intervals ``i`` and ``j``."""
    x_lo = np.asarray(x_lo, float)
    x_hi = np.asarray(x_hi, float)
    h = x_hi - x_lo
    out = np.zeros((len(h), len(h)))
    a1, a2 = x_lo[:, None], x_hi[:, None]
    b1, b2 = x_lo[None, :], x_hi[None, :]
    for a, c in zip(dz, cm):
        s = _g2(a2 - b1, a) - _g2(a1 - b1, a) - _g2(a2 - b2, a) + _g2(a1 - b2, a)
        out += c * s
    return out / (h[:, None] * h[None, :])


def strip_profile(u, width, z, weights, Lambda_eff):
    """Column currents of an infinite strip carrying unit current.

    Columns are ``[u_i, u_{i+1}] * width / 2``. Returns the fraction of the
    current in each column, from ``(L + diag(Lambda_eff / h)) I = const``
    with the per-length inductance ``L = -log(rho) / 2 pi``.
    """
    x = np.asarray(u, float) * 0.5 * width
    h = np.diff(x)
    dz, cm = sheet_offsets(z, weights)
    L = -mean_log_distance(x[:-1], x[1:], dz, cm) / (2.0 * math.pi)
    M = L + np.diag(Lambda_eff / h)
    col = scipy.linalg.solve(M, np.ones(len(h)), assume_a="sym")
    return col / col.sum()


# ---------------------------------------------------------------------------
# discrete operators
# ---------------------------------------------------------------------------


def _operators(mesh):
    """Sparse maps from nodal psi (row-major (ny+1, nx+1)) to cell Kx, Ky."""
    nx, ny = mesh.nx, mesh.ny
    X = mesh.node_x
    hy = np.diff(mesh.y_edges)
    J, I = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    J = J.ravel()
    I = I.ravel()
    n00 = J * (nx + 1) + I
    n01 = n00 + 1
    n10 = n00 + nx + 1
    n11 = n10 + 1
    x00, x01 = X[J, I], X[J, I + 1]
    x10, x11 = X[J + 1, I], X[J + 1, I + 1]
    x_xi = 0.25 * ((x01 - x00) + (x11 - x10))
    x_eta = 0.25 * ((x10 - x00) + (x11 - x01))
    y_eta = 0.5 * hy[J]
    # psi_xi = (-p00 + p01 - p10 + p11)/4, psi_eta = (-p00 - p01 + p10 + p11)/4
    cxi = np.array([-0.25, 0.25, -0.25, 0.25])
    ceta = np.array([-0.25, -0.25, 0.25, 0.25])
    nodes = np.stack([n00, n01, n10, n11], axis=1)
    rows = np.repeat(np.arange(nx * ny), 4)
    ky_vals = -(cxi[None, :] / x_xi[:, None])
    kx_vals = (ceta[None, :] - (x_eta / x_xi)[:, None] * cxi[None, :]) / y_eta[:, None]
    shape = (nx * ny, (nx + 1) * (ny + 1))
    Dx = sp.csr_matrix((kx_vals.ravel(), (rows, nodes.ravel())), shape=shape)
    Dy = sp.csr_matrix((ky_vals.ravel(), (rows, nodes.ravel())), shape=shape)
    return Dx, Dy


def _panel_potential(px, py, dz, xc, yc, hx, hy):
    """Integral of ``1/R`` over rectangles, at points offset by ``dz`` (broadcast)."""
    z2 = dz * dz
    total = 0.0
    for su, u in ((1.0, px - (xc - 0.5 * hx)), (-1.0, px - (xc + 0.5 * hx))):
        for sv, v in ((1.0, py - (yc - 0.5 * hy)), (-1.0, py - (yc + 0.5 * hy))):
            R = np.sqrt(u * u + v * v + z2)
            with np.errstate(divide="ignore", invalid="ignore"):
                lv = np.where(v >= 0, np.log(v + R), np.log((u * u + z2) / (R - v)))
                lu = np.where(u >= 0, np.log(u + R), np.log((v * v + z2) / (R - u)))
                lv = np.where(np.isfinite(lv), lv, 0.0)
                lu = np.where(np.isfinite(lu), lu, 0.0)
                at = np.arctan(u * v / (dz * R)) if dz > 0 else 0.0
            term = u * lv + v * lu - dz * at
            total = total + su * sv * term
    return total


def _lead_potential(mesh, lead_Ky, dz, cm, lead_length):
    """Cell-averaged ``sum_m c_m int K_lead / (4 pi R)`` from both leads.

    Cells within two row heights of a lead are averaged with 3x3 Gauss
    points; the potential is smooth elsewhere and is taken at the centre.
    """
    if lead_length <= 0:
        return np.zeros(mesh.n_cells)
    y_end = mesh.y_edges[-1]
    W = float(mesh.geometry.width(y_end))
    col_x = (0.5 * (mesh.u[:-1] + mesh.u[1:]) * 0.5 * W)[None, :]
    col_h = (np.diff(mesh.u) * 0.5 * W)[None, :]

    def potential(px, py):
        acc = np.zeros(len(px))
        for sgn in (-1.0, 1.0):
            lc = sgn * (y_end + 0.5 * lead_length)
            for a, c in zip(dz, cm):
                pot = _panel_potential(px[:, None], py[:, None], a, col_x, lc, col_h, lead_length)
                acc += c * (pot @ lead_Ky)
        return acc

    near = y_end - np.abs(mesh.yc) < 2.0 * mesh.hy
    out = potential(mesh.xc, mesh.yc)
    idx = np.nonzero(near)[0]
    if idx.size:
        avg = np.zeros(idx.size)
        for gx, wx in zip(_G3_X, _G3_W):
            for gy, wy in zip(_G3_X, _G3_W):
                avg += wx * wy * potential(mesh.xc[idx] + gx * mesh.hx[idx],
                                           mesh.yc[idx] + gy * mesh.hy[idx])
        out[idx] = avg
    return out / (4.0 * math.pi)


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------


def solve_current(geom, mesh, sheets, i_total, backend=None, lead_length=LEAD_LENGTH):
    """Sheet current carrying ``i_total`` (A) through ``geom`` on ``mesh``.

    The system is solved for unit current and scaled, so the result is
    exactly linear in ``i_total``. Raises :class:`SolverError` (with mesh
    diagnostics) if the dense system is singular.
    """
    if mesh.geometry != geom:
        raise DomainError("mesh was built for a different geometry")
    if not i_total >= 0:
        raise DomainError(f"i_total must be non-negative, got {i_total!r}")
    Lam, Lam_eff, weights = penetration_parameters(geom, sheets)
    nx, ny = mesh.nx, mesh.ny

    W_end = float(geom.width(mesh.y_edges[-1]))
    cols = strip_profile(mesh.u, W_end, sheets.z, weights, Lam_eff)
    edge_psi = 1.0 - np.concatenate([[0.0], np.cumsum(cols)])
    edge_psi[-1] = 0.0
    lead_Ky = cols / (np.diff(mesh.u) * 0.5 * W_end)

    dz, cm = sheet_offsets(sheets.z, weights)
    P = mean_inverse_distance(mesh.xc, mesh.yc, mesh.hx, mesh.hy, dz, cm, backend=backend)
    A = mesh.area
    P *= A[:, None]
    P *= A[None, :] / (4.0 * math.pi)  # now G_hat
    Dx, Dy = _operators(mesh)
    H = (Dx.T @ (Dx.T @ P).T) + (Dy.T @ (Dy.T @ P).T)
    del P
    H = np.asarray(H)
    H += (Lam_eff * (Dx.T @ sp.diags(A) @ Dx + Dy.T @ sp.diags(A) @ Dy)).toarray()
    f = Dy.T @ (A * _lead_potential(mesh, lead_Ky, dz, cm, lead_length))

    n_nodes = (nx + 1) * (ny + 1)
    fixed_val = np.full(n_nodes, np.nan)
    grid = fixed_val.reshape(ny + 1, nx + 1)
    grid[:, 0] = 1.0
    grid[:, -1] = 0.0
    grid[0, :] = edge_psi
    grid[-1, :] = edge_psi
    fixed = ~np.isnan(fixed_val)
    free = ~fixed
    rhs = -(H[np.ix_(free, fixed)] @ fixed_val[fixed]) - f[free]
    try:
        sol = scipy.linalg.solve(H[np.ix_(free, free)], rhs, assume_a="pos")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(
            f"stream-function system singular ({exc}); mesh nx={nx} ny={ny}, "
            f"min hx={mesh.hx.min():.3e} m, min hy={mesh.hy.min():.3e} m"
        ) from exc
    psi = fixed_val.copy()
    psi[free] = sol
    Kx = Dx @ psi
    Ky = Dy @ psi
    # global rescale so the end-row cut carries exactly one unit
    norm = float(np.dot(Ky[:nx], mesh.hx[:nx]))
    unit = SheetCurrentSolution(
        mesh=mesh, sheets=sheets, weights=weights,
        psi=(psi / norm).reshape(ny + 1, nx + 1), Kx=Kx / norm, Ky=Ky / norm,
        lead_Ky=lead_Ky, total_current=1.0, Lambda=Lam, Lambda_eff=Lam_eff,
        lead_length=lead_length,
    )
    return unit.scaled(float(i_total))


def solve_resonator(spec, target_cells=4000, backend=None):
    """Geometry, default mesh and solve at the rms vacuum current of ``spec``."""
    geom = build_geometry(spec)
    sheets = SheetStack.equidistant(geom.thickness, spec.n_sheets)
    mesh = mesh_geometry(geom, target_cells)
    return solve_current(geom, mesh, sheets, rms_supercurrent(spec.omega_r, spec.Z0), backend=backend)


def cross_section_current(sol, y):
    """Current (A) through the transverse cut at ``y``, summed over sheets."""
    mesh = sol.mesh
    j = mesh.row_of(y)  # raises DomainError outside the line
    sl = slice(j * mesh.nx, (j + 1) * mesh.nx)
    return float(np.dot(sol.Ky[sl], mesh.hx[sl]) * np.sum(sol.weights))


def boundary_normal_ratio(sol):
    """Max ``|K.n| / |K|`` at the film-edge face midpoints.

    The gradient of ``psi`` at each face midpoint is reconstructed from the
    difference along the face and the difference to the next node column
    (same ``y``, offset in ``x`` only).
    """
    X, psi = sol.mesh.node_x, sol.psi
    dy = np.diff(sol.mesh.y_edges)
    worst = 0.0
    for ib, ii in ((0, 1), (-1, -2)):
        tx = X[1:, ib] - X[:-1, ib]
        dpsi_t = psi[1:, ib] - psi[:-1, ib]
        mx = 0.5 * ((X[:-1, ii] + X[1:, ii]) - (X[:-1, ib] + X[1:, ib]))
        dpsi_m = 0.5 * ((psi[:-1, ii] + psi[1:, ii]) - (psi[:-1, ib] + psi[1:, ib]))
        gx = dpsi_m / mx
        gy = (dpsi_t - tx * gx) / dy
        tl = np.hypot(tx, dy)
        nx_, ny_ = dy / tl, -tx / tl
        Kx, Ky = gy, -gx
        Kmag = np.hypot(Kx, Ky)
        ok = Kmag > 0
        if np.any(ok):
            ratio = np.abs(Kx * nx_ + Ky * ny_)[ok] / Kmag[ok]
            worst = max(worst, float(ratio.max()))
    return worst
