"""Biot-Savart field of piecewise-constant sheet currents.

Each source element is a rectangular panel ``[xc +- hx/2] x [yc +- hy/2]``
carrying a uniform in-plane sheet current ``(Kx, Ky)`` (A/m), replicated on
every sheet of the stack at height ``zs[k]`` with weight ``ws[k]``. The
closed-form panel field is the transverse integral of the finite
straight-segment kernel, so it is exact for piecewise-constant currents and
stays finite everywhere off the panel itself.

Two evaluators are provided, each with a numba and a numpy implementation:

``direct``  exact panel kernel for every (probe, panel, sheet) triple.
``tree``    a treecode over the in-plane panel layout. Expansions are
            accepted per sheet (the node radius is in-plane only), with
            second-order (quadrupole) terms; nodes far enough away to make
            the sheet spread irrelevant use a single expansion at the
            weighted mean height. Unexpanded panels use the exact kernel
            close by and 2x2 Gauss or point elements further out.

All functions return the field in units of ``mu_0 / 4 pi`` (multiply by
``mu_0 / 4 pi`` in T m/A to obtain tesla).
"""

import math

import numpy as np

from .._backend import njit, use_numba

# tier thresholds in units of the panel half-diagonal
EXACT_RADIUS = 3.0
GAUSS_RADIUS = 12.0
DEFAULT_THETA = 0.4
LEAF_SIZE = 1
MAX_SHEETS = 62  # sheet sets are int64 bit masks in the numba traversal
_G = 1.0 / math.sqrt(3.0)
_TINY = 1e-300


# ---------------------------------------------------------------------------
# scalar kernels (numba)
# ---------------------------------------------------------------------------


@njit(error_model="numpy", inline="always")
def _log_sum(a, c2):
    # log(a + sqrt(a^2 + c2)) without cancellation for a < 0; the floor on c2
    # keeps paired corners on an edge line finite (their log(c2) cancel)
    if c2 < _TINY:
        c2 = _TINY
    R = math.sqrt(a * a + c2)
    if a >= 0.0:
        return math.log(a + R)
    return math.log(c2 / (R - a))


@njit(error_model="numpy", inline="always")
def _panel_field(px, py, pz, xc, yc, z0, hx, hy, Kx, Ky):
    u1 = px - (xc + 0.5 * hx)
    u2 = px - (xc - 0.5 * hx)
    v1 = py - (yc + 0.5 * hy)
    v2 = py - (yc - 0.5 * hy)
    w = pz - z0
    w2 = w * w
    s0 = 0.0
    su = 0.0
    sv = 0.0
    for a in range(4):
        u = u2 if (a == 0 or a == 2) else u1
        v = v2 if a < 2 else v1
        sign = 1.0 if (a == 0 or a == 3) else -1.0
        R = math.sqrt(u * u + v * v + w2)
        if w != 0.0:
            # in the sheet plane the in-plane components take the symmetric limit 0
            s0 += sign * math.atan(u * v / (w * R))
        # Fu = -log(v + R), Fv = -log(u + R)
        su -= sign * _log_sum(v, u * u + w2)
        sv -= sign * _log_sum(u, v * v + w2)
    return Ky * s0, -Kx * s0, Kx * sv - Ky * su


@njit(error_model="numpy", inline="always")
def _point_field(px, py, pz, x, y, z, mx, my):
    rx = px - x
    ry = py - y
    rz = pz - z
    r2 = rx * rx + ry * ry + rz * rz
    inv3 = 1.0 / (r2 * math.sqrt(r2))
    return my * rz * inv3, -mx * rz * inv3, (mx * ry - my * rx) * inv3


@njit(error_model="numpy", inline="always")
def _gauss4_field(px, py, pz, xc, yc, z0, hx, hy, Kx, Ky):
    mx = 0.25 * Kx * hx * hy
    my = 0.25 * Ky * hx * hy
    dx = 0.5 * hx * _G
    dy = 0.5 * hy * _G
    bx = 0.0
    by = 0.0
    bz = 0.0
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            a, b, c = _point_field(px, py, pz, xc + sx * dx, yc + sy * dy, z0, mx, my)
            bx += a
            by += b
            bz += c
    return bx, by, bz


@njit(error_model="numpy", inline="always")
def _sheet_panel_field(px, py, pz, xc, yc, z0, hx, hy, Kx, Ky):
    # tiered single-sheet panel
    s = 0.5 * math.sqrt(hx * hx + hy * hy)
    dx = px - xc
    dy = py - yc
    dz = pz - z0
    d = math.sqrt(dx * dx + dy * dy + dz * dz)
    if d < EXACT_RADIUS * s:
        return _panel_field(px, py, pz, xc, yc, z0, hx, hy, Kx, Ky)
    if d < GAUSS_RADIUS * s:
        return _gauss4_field(px, py, pz, xc, yc, z0, hx, hy, Kx, Ky)
    return _point_field(px, py, pz, xc, yc, z0, Kx * hx * hy, Ky * hx * hy)


@njit(error_model="numpy", inline="always")
def _expansion_field(Rx, Ry, Rz, mx, my, T, Q, szz):
    """Second-order expansion of ``sum_e m_e x (R - d_e) / |R - d_e|^3``.

    ``T[a, b] = sum m_a d_b`` and ``Q[a] = sum m_a (d_x^2, d_x d_y, d_y^2)``
    over in-plane offsets; ``szz`` is the z variance of the sources about
    the expansion centre (0 for a single sheet).
    """
    r2 = Rx * Rx + Ry * Ry + Rz * Rz
    r = math.sqrt(r2)
    inv3 = 1.0 / (r2 * r)
    inv5 = inv3 / r2
    inv7 = inv5 / r2
    Fxy = 0.0
    Fxz = 0.0
    Fyx = 0.0
    Fyz = 0.0
    for a in range(2):
        m = mx if a == 0 else my
        tR = T[a, 0] * Rx + T[a, 1] * Ry
        qx = Q[a, 0] * Rx + Q[a, 1] * Ry
        qy = Q[a, 1] * Rx + Q[a, 2] * Ry
        qz = m * szz * Rz
        tr = Q[a, 0] + Q[a, 2] + m * szz
        rqr = Rx * qx + Ry * qy + Rz * qz
        common = m * inv3 + 3.0 * tR * inv5 - 1.5 * tr * inv5 + 7.5 * rqr * inv7
        Fz = Rz * common - 3.0 * qz * inv5
        if a == 0:
            Fxy = Ry * common - T[0, 1] * inv3 - 3.0 * qy * inv5
            Fxz = Fz
        else:
            Fyx = Rx * common - T[1, 0] * inv3 - 3.0 * qx * inv5
            Fyz = Fz
    return Fyz, -Fxz, Fxy - Fyx


# ---------------------------------------------------------------------------
# numba drivers
# ---------------------------------------------------------------------------


@njit(error_model="numpy")
def _direct_numba(points, xc, yc, hx, hy, Kx, Ky, zs, ws):
    n = points.shape[0]
    out = np.zeros((n, 3))
    for p in range(n):
        px = points[p, 0]
        py = points[p, 1]
        pz = points[p, 2]
        bx = 0.0
        by = 0.0
        bz = 0.0
        for c in range(xc.shape[0]):
            for k in range(zs.shape[0]):
                a, b, cc = _panel_field(px, py, pz, xc[c], yc[c], zs[k], hx[c], hy[c],
                                        Kx[c] * ws[k], Ky[c] * ws[k])
                bx += a
                by += b
                bz += cc
        out[p, 0] = bx
        out[p, 1] = by
        out[p, 2] = bz
    return out


@njit(error_model="numpy")
def _tree_numba(points, xc, yc, hx, hy, Kx, Ky, zs, ws,
                centers, radii, radii3, moments, tensors, quads, zbar, szz,
                left, right, start, stop, theta):
    n = points.shape[0]
    ns = zs.shape[0]
    full = (np.int64(1) << ns) - 1
    out = np.zeros((n, 3))
    stack_node = np.empty(512, dtype=np.int64)
    stack_mask = np.empty(512, dtype=np.int64)
    for p in range(n):
        px = points[p, 0]
        py = points[p, 1]
        pz = points[p, 2]
        bx = 0.0
        by = 0.0
        bz = 0.0
        stack_node[0] = 0
        stack_mask[0] = full
        top = 1
        while top > 0:
            top -= 1
            node = stack_node[top]
            mask = stack_mask[top]
            Rx = px - centers[node, 0]
            Ry = py - centers[node, 1]
            rho2 = Rx * Rx + Ry * Ry
            mx = moments[node, 0]
            my = moments[node, 1]
            if mask == full:
                Rz = pz - zbar
                if math.sqrt(rho2 + Rz * Rz) * theta > radii3[node]:
                    a, b, c = _expansion_field(Rx, Ry, Rz, mx, my, tensors[node], quads[node], szz)
                    bx += a
                    by += b
                    bz += c
                    continue
            rest = np.int64(0)
            for k in range(ns):
                if (mask >> k) & 1:
                    Rz = pz - zs[k]
                    if math.sqrt(rho2 + Rz * Rz) * theta > radii[node]:
                        a, b, c = _expansion_field(Rx, Ry, Rz, mx, my, tensors[node], quads[node], 0.0)
                        bx += ws[k] * a
                        by += ws[k] * b
                        bz += ws[k] * c
                    else:
                        rest |= np.int64(1) << k
            if rest == 0:
                continue
            if left[node] < 0:
                for cell in range(start[node], stop[node]):
                    for k in range(ns):
                        if (rest >> k) & 1:
                            a, b, c = _sheet_panel_field(px, py, pz, xc[cell], yc[cell], zs[k],
                                                         hx[cell], hy[cell],
                                                         Kx[cell] * ws[k], Ky[cell] * ws[k])
                            bx += a
                            by += b
                            bz += c
            else:
                stack_node[top] = right[node]
                stack_mask[top] = rest
                stack_node[top + 1] = left[node]
                stack_mask[top + 1] = rest
                top += 2
        out[p, 0] = bx
        out[p, 1] = by
        out[p, 2] = bz
    return out


# ---------------------------------------------------------------------------
# numpy implementations (same formulas, vectorised)
# ---------------------------------------------------------------------------


def _np_log_sum(a, c2):
    c2 = np.maximum(c2, _TINY)
    R = np.sqrt(a * a + c2)
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = np.log(np.where(a >= 0, a + R, 1.0))
        neg = np.log(np.where(a < 0, c2 / np.where(a < 0, R - a, 1.0), 1.0))
    return np.where(a >= 0, pos, neg)


def _np_panel_field(px, py, pz, xc, yc, z0, hx, hy, Kx, Ky):
    u1 = px - (xc + 0.5 * hx)
    u2 = px - (xc - 0.5 * hx)
    v1 = py - (yc + 0.5 * hy)
    v2 = py - (yc - 0.5 * hy)
    w = pz - z0
    w2 = w * w
    s0 = 0.0
    su = 0.0
    sv = 0.0
    for u, v, sign in ((u2, v2, 1.0), (u1, v2, -1.0), (u2, v1, -1.0), (u1, v1, 1.0)):
        R = np.sqrt(u * u + v * v + w2)
        with np.errstate(divide="ignore", invalid="ignore"):
            s0 = s0 + sign * np.where(w != 0, np.arctan(u * v / (w * R)), 0.0)
        su = su - sign * _np_log_sum(v, u * u + w2)
        sv = sv - sign * _np_log_sum(u, v * v + w2)
    return Ky * s0, -Kx * s0, Kx * sv - Ky * su


def _np_point_field(px, py, pz, x, y, z, mx, my):
    rx = px - x
    ry = py - y
    rz = pz - z
    r2 = rx * rx + ry * ry + rz * rz
    inv3 = 1.0 / (r2 * np.sqrt(r2))
    return my * rz * inv3, -mx * rz * inv3, (mx * ry - my * rx) * inv3


def _np_gauss4_field(px, py, pz, xc, yc, z0, hx, hy, Kx, Ky):
    mx = 0.25 * Kx * hx * hy
    my = 0.25 * Ky * hx * hy
    dx = 0.5 * hx * _G
    dy = 0.5 * hy * _G
    bx = by = bz = 0.0
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            a, b, c = _np_point_field(px, py, pz, xc + sx * dx, yc + sy * dy, z0, mx, my)
            bx = bx + a
            by = by + b
            bz = bz + c
    return bx, by, bz


def _np_sheet_panel_field(px, py, pz, xc, yc, z0, hx, hy, Kx, Ky):
    """Tiered single-sheet panels; probes along axis 0, panels along axis 1."""
    s = 0.5 * np.sqrt(hx * hx + hy * hy)
    d = np.sqrt((px - xc) ** 2 + (py - yc) ** 2 + (pz - z0) ** 2)
    exact = d < EXACT_RADIUS * s
    gauss = (~exact) & (d < GAUSS_RADIUS * s)
    far = ~(exact | gauss)
    bx = by = bz = 0.0
    for mask, fn in ((exact, _np_panel_field), (gauss, _np_gauss4_field)):
        if np.any(mask):
            a, b, c = fn(px, py, pz, xc, yc, z0, hx, hy, Kx, Ky)
            bx = bx + np.where(mask, a, 0.0)
            by = by + np.where(mask, b, 0.0)
            bz = bz + np.where(mask, c, 0.0)
    if np.any(far):
        a, b, c = _np_point_field(px, py, pz, xc, yc, z0, Kx * hx * hy, Ky * hx * hy)
        bx = bx + np.where(far, a, 0.0)
        by = by + np.where(far, b, 0.0)
        bz = bz + np.where(far, c, 0.0)
    return bx, by, bz


def _np_expansion_field(R, M, T, Q, szz):
    Rx, Ry, Rz = R[:, 0], R[:, 1], R[:, 2]
    r2 = Rx * Rx + Ry * Ry + Rz * Rz
    r = np.sqrt(r2)
    inv3 = 1.0 / (r2 * r)
    inv5 = inv3 / r2
    inv7 = inv5 / r2
    F = []
    for a in range(2):
        m = M[a]
        tR = T[a, 0] * Rx + T[a, 1] * Ry
        qx = Q[a, 0] * Rx + Q[a, 1] * Ry
        qy = Q[a, 1] * Rx + Q[a, 2] * Ry
        qz = m * szz * Rz
        tr = Q[a, 0] + Q[a, 2] + m * szz
        rqr = Rx * qx + Ry * qy + Rz * qz
        common = m * inv3 + 3.0 * tR * inv5 - 1.5 * tr * inv5 + 7.5 * rqr * inv7
        F.append((Rx * common - T[a, 0] * inv3 - 3.0 * qx * inv5,
                  Ry * common - T[a, 1] * inv3 - 3.0 * qy * inv5,
                  Rz * common - 3.0 * qz * inv5))
    return np.column_stack([F[1][2], -F[0][2], F[0][1] - F[1][0]])


def _direct_numpy(points, xc, yc, hx, hy, Kx, Ky, zs, ws, chunk=None):
    n = points.shape[0]
    out = np.zeros((n, 3))
    ncell = xc.shape[0]
    if chunk is None:
        chunk = max(1, int(2_000_000 // max(ncell, 1)))
    for s in range(0, n, chunk):
        P = points[s:s + chunk]
        px, py, pz = P[:, 0:1], P[:, 1:2], P[:, 2:3]
        acc = np.zeros((len(P), 3))
        for k in range(zs.shape[0]):
            a, b, c = _np_panel_field(px, py, pz, xc, yc, zs[k], hx, hy, Kx * ws[k], Ky * ws[k])
            acc[:, 0] += a.sum(axis=1)
            acc[:, 1] += b.sum(axis=1)
            acc[:, 2] += c.sum(axis=1)
        out[s:s + chunk] = acc
    return out


def _tree_numpy(points, xc, yc, hx, hy, Kx, Ky, zs, ws,
                centers, radii, radii3, moments, tensors, quads, zbar, szz,
                left, right, start, stop, theta):
    n = points.shape[0]
    ns = zs.shape[0]
    out = np.zeros((n, 3))
    # work items: node, probe indices, per-probe boolean sheet sets
    work = [(0, np.arange(n), np.ones((n, ns), dtype=bool))]
    while work:
        node, idx, mask = work.pop()
        P = points[idx]
        R2 = P[:, :2] - centers[node]
        rho2 = np.einsum("ij,ij->i", R2, R2)
        full = mask.all(axis=1)
        far = full & (np.sqrt(rho2 + (P[:, 2] - zbar) ** 2) * theta > radii3[node])
        if np.any(far):
            R = np.column_stack([R2[far], P[far, 2] - zbar])
            out[idx[far]] += _np_expansion_field(R, moments[node], tensors[node], quads[node], szz)
        keep = ~far
        idx, P, R2, rho2, mask = idx[keep], P[keep], R2[keep], rho2[keep], mask[keep].copy()
        for k in range(ns):
            acc = mask[:, k] & (np.sqrt(rho2 + (P[:, 2] - zs[k]) ** 2) * theta > radii[node])
            if np.any(acc):
                R = np.column_stack([R2[acc], P[acc, 2] - zs[k]])
                out[idx[acc]] += ws[k] * _np_expansion_field(R, moments[node], tensors[node], quads[node], 0.0)
                mask[acc, k] = False
        live = mask.any(axis=1)
        idx, P, mask = idx[live], P[live], mask[live]
        if idx.size == 0:
            continue
        if left[node] < 0:
            sl = slice(start[node], stop[node])
            for k in range(ns):
                sel = mask[:, k]
                if not np.any(sel):
                    continue
                Q = P[sel]
                a, b, c = _np_sheet_panel_field(Q[:, 0:1], Q[:, 1:2], Q[:, 2:3], xc[sl], yc[sl], zs[k],
                                                hx[sl], hy[sl], Kx[sl] * ws[k], Ky[sl] * ws[k])
                out[idx[sel], 0] += np.sum(a, axis=1)
                out[idx[sel], 1] += np.sum(b, axis=1)
                out[idx[sel], 2] += np.sum(c, axis=1)
        else:
            work.append((right[node], idx, mask))
            work.append((left[node], idx, mask))
    return out


# ---------------------------------------------------------------------------
# tree construction and public entry points
# ---------------------------------------------------------------------------


class SourceTree:
    """Binary space-partition tree over panels with cluster expansions.

    Panels are reordered so each node owns a contiguous range. Per node:
    in-plane centre and radius (covering whole panels), the radius including
    the sheet spread about the weighted mean height, the net moment
    ``M = sum K A``, first moments ``T[a, b] = sum m_a d_b`` and second
    moments ``Q[a] = sum m_a (d_x^2, d_x d_y, d_y^2)`` including each panel's
    own extent.
    """

    def __init__(self, xc, yc, hx, hy, Kx, Ky, zs, ws, leaf_size=LEAF_SIZE):
        self.zs = np.ascontiguousarray(zs, dtype=float)
        self.ws = np.ascontiguousarray(ws, dtype=float)
        if len(self.zs) > MAX_SHEETS:
            raise ValueError(f"at most {MAX_SHEETS} sheets are supported, got {len(self.zs)}")
        n = len(xc)
        order = np.arange(n)
        nodes = []  # (start, stop, left, right)
        pts = np.column_stack([xc, yc])

        def split(lo, hi):
            me = len(nodes)
            nodes.append([lo, hi, -1, -1])
            if hi - lo <= leaf_size:
                return me
            sub = order[lo:hi]
            span = pts[sub].max(axis=0) - pts[sub].min(axis=0)
            axis = int(np.argmax(span))
            # stable sort keeps construction deterministic
            sub = sub[np.argsort(pts[sub, axis], kind="stable")]
            order[lo:hi] = sub
            mid = (lo + hi) // 2
            nodes[me][2] = split(lo, mid)
            nodes[me][3] = split(mid, hi)
            return me

        if n:
            split(0, n)
        self.order = order
        arr = np.array(nodes, dtype=np.int64).reshape(-1, 4)
        self.start = np.ascontiguousarray(arr[:, 0])
        self.stop = np.ascontiguousarray(arr[:, 1])
        self.left = np.ascontiguousarray(arr[:, 2])
        self.right = np.ascontiguousarray(arr[:, 3])
        take = lambda a: np.ascontiguousarray(np.asarray(a, float)[order])  # noqa: E731
        self.xc, self.yc, self.hx, self.hy, self.Kx, self.Ky = map(take, (xc, yc, hx, hy, Kx, Ky))
        self._moments()

    def _moments(self):
        nn = len(self.start)
        A = self.hx * self.hy
        wsum = float(self.ws.sum())
        self.zbar = float(np.dot(self.ws, self.zs) / wsum) if wsum else 0.0
        wn = self.ws / wsum if wsum else self.ws
        self.szz = float(np.dot(wn, (self.zs - self.zbar) ** 2))
        zspread = float(np.max(np.abs(self.zs - self.zbar))) if len(self.zs) else 0.0
        self.centers = np.zeros((nn, 2))
        self.radii = np.zeros(nn)
        self.radii3 = np.zeros(nn)
        self.moments = np.zeros((nn, 2))
        self.tensors = np.zeros((nn, 2, 2))
        self.quads = np.zeros((nn, 2, 3))
        for node in range(nn):
            sl = slice(self.start[node], self.stop[node])
            x0 = np.min(self.xc[sl] - 0.5 * self.hx[sl])
            x1 = np.max(self.xc[sl] + 0.5 * self.hx[sl])
            y0 = np.min(self.yc[sl] - 0.5 * self.hy[sl])
            y1 = np.max(self.yc[sl] + 0.5 * self.hy[sl])
            cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
            self.centers[node] = (cx, cy)
            r = math.hypot(0.5 * (x1 - x0), 0.5 * (y1 - y0))
            self.radii[node] = r
            self.radii3[node] = math.hypot(r, zspread)
            dx = self.xc[sl] - cx
            dy = self.yc[sl] - cy
            qxx = dx * dx + self.hx[sl] ** 2 / 12.0
            qxy = dx * dy
            qyy = dy * dy + self.hy[sl] ** 2 / 12.0
            for a, K in enumerate((self.Kx[sl], self.Ky[sl])):
                m = K * A[sl]
                self.moments[node, a] = m.sum()
                self.tensors[node, a] = (np.dot(m, dx), np.dot(m, dy))
                self.quads[node, a] = (np.dot(m, qxx), np.dot(m, qxy), np.dot(m, qyy))

    def arrays(self):
        return (self.xc, self.yc, self.hx, self.hy, self.Kx, self.Ky, self.zs, self.ws,
                self.centers, self.radii, self.radii3, self.moments, self.tensors, self.quads,
                self.zbar, self.szz, self.left, self.right, self.start, self.stop)


def direct_field(points, xc, yc, hx, hy, Kx, Ky, zs, ws, backend=None):
    """Exact field (units of mu_0/4pi) of all panels at ``points`` (n, 3)."""
    points = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
    args = [np.ascontiguousarray(a, dtype=float) for a in (xc, yc, hx, hy, Kx, Ky, zs, ws)]
    numba_path = use_numba() if backend is None else backend == "numba"
    if numba_path:
        return _direct_numba(points, *args)
    return _direct_numpy(points, *args)


def tree_field(points, tree, theta=DEFAULT_THETA, backend=None):
    """Treecode field (units of mu_0/4pi) at ``points`` (n, 3)."""
    points = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
    if len(tree.start) == 0 or len(points) == 0:
        return np.zeros((len(points), 3))
    numba_path = use_numba() if backend is None else backend == "numba"
    if numba_path:
        return _tree_numba(points, *tree.arrays(), float(theta))
    return _tree_numpy(points, *tree.arrays(), float(theta))
