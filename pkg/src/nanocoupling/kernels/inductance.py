"""Mean inverse distance between rectangular cells of a multi-sheet film.

For cells ``c`` and ``c'`` the assembled entry is

    P[c, c'] = sum_m cm[m] * < 1 / sqrt(|r - r'|^2 + dz[m]^2) >

where the average runs over ``r`` in ``c`` and ``r'`` in ``c'`` and the pairs
``(dz[m], cm[m])`` summarise all sheet-to-sheet height offsets with their
weight products. Three quadrature tiers are used, chosen by centre distance
relative to the cell half-diagonals: a single point, 3x3 Gauss on both cells,
and for close pairs the exact reduction to a 2D integral of the kernel
against the trapezoidal overlap functions. The near-field pieces touching
the origin are integrated with a Duffy transform so the ``1/r`` singularity
of same-sheet terms is removed analytically.
"""

import math

import numpy as np

from .._backend import njit, use_numba

POINT_FACTOR = 4.0
GAUSS_FACTOR = 1.5

_G3_X = np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_G3_W = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])  # sums to 1 (mean)
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_X = 0.5 * (_GL_X + 1.0)  # nodes on [0, 1]
_GL_W = 0.5 * _GL_W


# ---------------------------------------------------------------------------
# numba
# ---------------------------------------------------------------------------


@njit(inline="always")
def _kern(u, v, dz, cm):
    r2 = u * u + v * v
    s = 0.0
    for m in range(dz.shape[0]):
        s += cm[m] / math.sqrt(r2 + dz[m] * dz[m])
    return s


@njit(inline="always")
def _overlap(t, a1, a2, b1, b2):
    lo = max(a1, b1 + t)
    hi = min(a2, b2 + t)
    return hi - lo if hi > lo else 0.0


@njit
def _snap(k):
    # rounding leaves shared edges a hair off zero; the Duffy branch needs exact 0
    tol = 1e-9 * (np.max(k) - np.min(k))
    for i in range(k.shape[0]):
        if abs(k[i]) < tol:
            k[i] = 0.0
    return np.sort(k)


@njit
def _plain_piece(p, q, r, s, ax1, ax2, ay1, ay2, bx1, bx2, by1, by2, dz, cm, gx, gw):
    acc = 0.0
    for a in range(gx.shape[0]):
        u = p + (q - p) * gx[a]
        tu = _overlap(u, ax1, ax2, bx1, bx2)
        for b in range(gx.shape[0]):
            v = r + (s - r) * gx[b]
            acc += gw[a] * gw[b] * _kern(u, v, dz, cm) * tu * _overlap(v, ay1, ay2, by1, by2)
    return acc * (q - p) * (s - r)


@njit
def _duffy(U, V, ax1, ax2, ay1, ay2, bx1, bx2, by1, by2, dz, cm, gx, gw):
    # [0, U] x [0, V] with the singular point at the origin corner
    acc = 0.0
    for a in range(gx.shape[0]):
        for b in range(gx.shape[0]):
            u = U * gx[a]
            v = V * gx[a] * gx[b]
            f = _kern(u, v, dz, cm) * _overlap(u, ax1, ax2, bx1, bx2) * _overlap(v, ay1, ay2, by1, by2)
            acc += gw[a] * gw[b] * f * gx[a]
            v = V * gx[a]
            u = U * gx[a] * gx[b]
            f = _kern(u, v, dz, cm) * _overlap(u, ax1, ax2, bx1, bx2) * _overlap(v, ay1, ay2, by1, by2)
            acc += gw[a] * gw[b] * f * gx[a]
    return acc * abs(U * V)


@njit
def _corner_piece(U, V, ax1, ax2, ay1, ay2, bx1, bx2, by1, by2, dz, cm, gx, gw):
    # elongated pieces: Duffy on the square at the origin, geometric strips beyond
    au = abs(U)
    av = abs(V)
    if av > 2.0 * au:
        sv = 1.0 if V > 0 else -1.0
        total = _corner_square(U, sv * au, ax1, ax2, ay1, ay2, bx1, bx2, by1, by2, dz, cm, gx, gw)
        lo = au
        while lo < av:
            hi = min(2.0 * lo, av)
            r0 = sv * lo
            r1 = sv * hi
            total += _plain_piece(min(0.0, U), max(0.0, U), min(r0, r1), max(r0, r1),
                                  ax1, ax2, ay1, ay2, bx1, bx2, by1, by2, dz, cm, gx, gw)
            lo = hi
        return total
    if au > 2.0 * av:
        su = 1.0 if U > 0 else -1.0
        total = _corner_square(su * av, V, ax1, ax2, ay1, ay2, bx1, bx2, by1, by2, dz, cm, gx, gw)
        lo = av
        while lo < au:
            hi = min(2.0 * lo, au)
            r0 = su * lo
            r1 = su * hi
            total += _plain_piece(min(r0, r1), max(r0, r1), min(0.0, V), max(0.0, V),
                                  ax1, ax2, ay1, ay2, bx1, bx2, by1, by2, dz, cm, gx, gw)
            lo = hi
        return total
    return _corner_square(U, V, ax1, ax2, ay1, ay2, bx1, bx2, by1, by2, dz, cm, gx, gw)


@njit
def _corner_square(U, V, ax1, ax2, ay1, ay2, bx1, bx2, by1, by2, dz, cm, gx, gw):
    # halve towards the origin until the piece is comparable to dz, then Duffy
    au = abs(U)
    av = abs(V)
    dmin = 0.0
    for m in range(dz.shape[0]):
        if dz[m] > 0.0 and (dmin == 0.0 or dz[m] < dmin):
            dmin = dz[m]
    total = 0.0
    while dmin > 0.0 and min(au, av) > 4.0 * dmin:
        hu = 0.5 * U
        hv = 0.5 * V
        total += _plain_piece(min(hu, U), max(hu, U), min(0.0, V), max(0.0, V),
                              ax1, ax2, ay1, ay2, bx1, bx2, by1, by2, dz, cm, gx, gw)
        total += _plain_piece(min(0.0, hu), max(0.0, hu), min(hv, V), max(hv, V),
                              ax1, ax2, ay1, ay2, bx1, bx2, by1, by2, dz, cm, gx, gw)
        U = hu
        V = hv
        au = abs(U)
        av = abs(V)
    return total + _duffy(U, V, ax1, ax2, ay1, ay2, bx1, bx2, by1, by2, dz, cm, gx, gw)


@njit
def _near_pair(ax1, ax2, ay1, ay2, bx1, bx2, by1, by2, dz, cm, gx, gw):
    ku = _snap(np.array([ax1 - bx2, ax1 - bx1, ax2 - bx2, ax2 - bx1, 0.0]))
    kv = _snap(np.array([ay1 - by2, ay1 - by1, ay2 - by2, ay2 - by1, 0.0]))
    lo_u = ku[0]
    hi_u = ku[4]
    lo_v = kv[0]
    hi_v = kv[4]
    total = 0.0
    for i in range(4):
        p = max(ku[i], lo_u)
        q = min(ku[i + 1], hi_u)
        if q <= p:
            continue
        for j in range(4):
            r = max(kv[j], lo_v)
            s = min(kv[j + 1], hi_v)
            if s <= r:
                continue
            at_u = p == 0.0 or q == 0.0
            at_v = r == 0.0 or s == 0.0
            if at_u and at_v:
                U = q if p == 0.0 else p
                V = s if r == 0.0 else r
                total += _corner_piece(U, V, ax1, ax2, ay1, ay2, bx1, bx2, by1, by2, dz, cm, gx, gw)
            else:
                total += _plain_piece(p, q, r, s, ax1, ax2, ay1, ay2, bx1, bx2, by1, by2, dz, cm, gx, gw)
    return total / ((ax2 - ax1) * (ay2 - ay1) * (bx2 - bx1) * (by2 - by1))


@njit
def _assemble_numba(xc, yc, hx, hy, dz, cm, g3x, g3w, gx, gw):
    n = xc.shape[0]
    P = np.empty((n, n))
    for i in range(n):
        si = 0.5 * math.sqrt(hx[i] * hx[i] + hy[i] * hy[i])
        for j in range(i, n):
            sj = 0.5 * math.sqrt(hx[j] * hx[j] + hy[j] * hy[j])
            du = xc[i] - xc[j]
            dv = yc[i] - yc[j]
            R = math.sqrt(du * du + dv * dv)
            if R >= POINT_FACTOR * (si + sj):
                val = _kern(du, dv, dz, cm)
            elif R >= GAUSS_FACTOR * (si + sj):
                val = 0.0
                for a in range(3):
                    for b in range(3):
                        xi = xc[i] + 0.5 * hx[i] * g3x[a]
                        yi = yc[i] + 0.5 * hy[i] * g3x[b]
                        wi = g3w[a] * g3w[b]
                        for c in range(3):
                            for d in range(3):
                                xj = xc[j] + 0.5 * hx[j] * g3x[c]
                                yj = yc[j] + 0.5 * hy[j] * g3x[d]
                                val += wi * g3w[c] * g3w[d] * _kern(xi - xj, yi - yj, dz, cm)
            else:
                val = _near_pair(xc[i] - 0.5 * hx[i], xc[i] + 0.5 * hx[i],
                                 yc[i] - 0.5 * hy[i], yc[i] + 0.5 * hy[i],
                                 xc[j] - 0.5 * hx[j], xc[j] + 0.5 * hx[j],
                                 yc[j] - 0.5 * hy[j], yc[j] + 0.5 * hy[j], dz, cm, gx, gw)
            P[i, j] = val
            P[j, i] = val
    return P


# ---------------------------------------------------------------------------
# numpy
# ---------------------------------------------------------------------------


def _np_kern(u, v, dz, cm):
    r2 = u * u + v * v
    out = 0.0
    for m in range(len(dz)):
        out = out + cm[m] / np.sqrt(r2 + dz[m] * dz[m])
    return out


def _np_overlap(t, a1, a2, b1, b2):
    return np.clip(np.minimum(a2, b2 + t) - np.maximum(a1, b1 + t), 0.0, None)


def _np_snap(k):
    k = np.asarray(k, dtype=float)
    k = np.where(np.abs(k) < 1e-9 * (k.max() - k.min()), 0.0, k)
    return np.sort(k)


_A, _B = np.meshgrid(_GL_X, _GL_X, indexing="ij")
_WW = np.outer(_GL_W, _GL_W)


def _np_weight(u, v, geo):
    ax1, ax2, ay1, ay2, bx1, bx2, by1, by2 = geo
    return _np_overlap(u, ax1, ax2, bx1, bx2) * _np_overlap(v, ay1, ay2, by1, by2)


def _np_plain_piece(p, q, r, s, geo, dz, cm):
    u = p + (q - p) * _A
    v = r + (s - r) * _B
    return np.sum(_WW * _np_kern(u, v, dz, cm) * _np_weight(u, v, geo)) * (q - p) * (s - r)


def _np_duffy(U, V, geo, dz, cm):
    acc = 0.0
    for u, v in ((U * _A, V * _A * _B), (U * _A * _B, V * _A)):
        acc += np.sum(_WW * _np_kern(u, v, dz, cm) * _np_weight(u, v, geo) * _A)
    return acc * abs(U * V)


def _np_corner_piece(U, V, geo, dz, cm):
    au, av = abs(U), abs(V)
    if av > 2.0 * au:
        sv = 1.0 if V > 0 else -1.0
        total = _np_corner_square(U, sv * au, geo, dz, cm)
        lo = au
        while lo < av:
            hi = min(2.0 * lo, av)
            r0, r1 = sv * lo, sv * hi
            total += _np_plain_piece(min(0.0, U), max(0.0, U), min(r0, r1), max(r0, r1), geo, dz, cm)
            lo = hi
        return total
    if au > 2.0 * av:
        su = 1.0 if U > 0 else -1.0
        total = _np_corner_square(su * av, V, geo, dz, cm)
        lo = av
        while lo < au:
            hi = min(2.0 * lo, au)
            r0, r1 = su * lo, su * hi
            total += _np_plain_piece(min(r0, r1), max(r0, r1), min(0.0, V), max(0.0, V), geo, dz, cm)
            lo = hi
        return total
    return _np_corner_square(U, V, geo, dz, cm)


def _np_corner_square(U, V, geo, dz, cm):
    au, av = abs(U), abs(V)
    pos = np.asarray(dz)[np.asarray(dz) > 0]
    dmin = float(pos.min()) if pos.size else 0.0
    total = 0.0
    while dmin > 0.0 and min(au, av) > 4.0 * dmin:
        hu, hv = 0.5 * U, 0.5 * V
        total += _np_plain_piece(min(hu, U), max(hu, U), min(0.0, V), max(0.0, V), geo, dz, cm)
        total += _np_plain_piece(min(0.0, hu), max(0.0, hu), min(hv, V), max(hv, V), geo, dz, cm)
        U, V = hu, hv
        au, av = abs(U), abs(V)
    return total + _np_duffy(U, V, geo, dz, cm)


def _np_near_pair(ax1, ax2, ay1, ay2, bx1, bx2, by1, by2, dz, cm):
    ku = _np_snap([ax1 - bx2, ax1 - bx1, ax2 - bx2, ax2 - bx1, 0.0])
    kv = _np_snap([ay1 - by2, ay1 - by1, ay2 - by2, ay2 - by1, 0.0])
    lo_u, hi_u = ku[0], ku[4]
    lo_v, hi_v = kv[0], kv[4]
    geo = (ax1, ax2, ay1, ay2, bx1, bx2, by1, by2)
    total = 0.0
    for i in range(4):
        p, q = max(ku[i], lo_u), min(ku[i + 1], hi_u)
        if q <= p:
            continue
        for j in range(4):
            r, s = max(kv[j], lo_v), min(kv[j + 1], hi_v)
            if s <= r:
                continue
            if (p == 0.0 or q == 0.0) and (r == 0.0 or s == 0.0):
                U = q if p == 0.0 else p
                V = s if r == 0.0 else r
                total += _np_corner_piece(U, V, geo, dz, cm)
            else:
                total += _np_plain_piece(p, q, r, s, geo, dz, cm)
    return total / ((ax2 - ax1) * (ay2 - ay1) * (bx2 - bx1) * (by2 - by1))


def _assemble_numpy(xc, yc, hx, hy, dz, cm):
    s = 0.5 * np.hypot(hx, hy)
    du = xc[:, None] - xc[None, :]
    dv = yc[:, None] - yc[None, :]
    R = np.hypot(du, dv)
    ssum = s[:, None] + s[None, :]
    with np.errstate(divide="ignore"):
        P = _np_kern(du, dv, dz, cm)  # diagonal overwritten by the near tier
    gauss = (R < POINT_FACTOR * ssum) & (R >= GAUSS_FACTOR * ssum)
    ii, jj = np.nonzero(np.triu(gauss))
    if ii.size:
        ox = 0.5 * _G3_X
        w2 = np.outer(_G3_W, _G3_W).ravel()
        offx = np.repeat(ox, 3)
        offy = np.tile(ox, 3)
        for lo in range(0, ii.size, 4096):
            i = ii[lo:lo + 4096]
            j = jj[lo:lo + 4096]
            xi = xc[i, None] + hx[i, None] * offx
            yi = yc[i, None] + hy[i, None] * offy
            xj = xc[j, None] + hx[j, None] * offx
            yj = yc[j, None] + hy[j, None] * offy
            k = _np_kern(xi[:, :, None] - xj[:, None, :], yi[:, :, None] - yj[:, None, :], dz, cm)
            val = np.einsum("pab,a,b->p", k, w2, w2)
            P[i, j] = val
            P[j, i] = val
    near = R < GAUSS_FACTOR * ssum
    ii, jj = np.nonzero(np.triu(near))
    for i, j in zip(ii, jj):
        val = _np_near_pair(xc[i] - 0.5 * hx[i], xc[i] + 0.5 * hx[i],
                            yc[i] - 0.5 * hy[i], yc[i] + 0.5 * hy[i],
                            xc[j] - 0.5 * hx[j], xc[j] + 0.5 * hx[j],
                            yc[j] - 0.5 * hy[j], yc[j] + 0.5 * hy[j], dz, cm)
        P[i, j] = val
        P[j, i] = val
    return P


def sheet_offsets(z, weights):
    """Collapse sheet pairs into distinct |dz| values with summed weight products."""
    z = np.asarray(z, dtype=float)
    w = np.asarray(weights, dtype=float)
    n = len(z)
    dz = np.abs(z[:, None] - z[None, :])
    ww = w[:, None] * w[None, :]
    keys = np.round(dz / max(np.max(dz), 1e-300) * (4 * n)).astype(int) if n > 1 else np.zeros((1, 1), int)
    uniq = np.unique(keys)
    out_dz = np.array([dz[keys == k].mean() for k in uniq])
    out_c = np.array([ww[keys == k].sum() for k in uniq])
    return out_dz, out_c


def mean_inverse_distance(xc, yc, hx, hy, dz, cm, backend=None):
    """Dense symmetric matrix ``P`` (1/m) described in the module docstring."""
    args = [np.ascontiguousarray(a, dtype=float) for a in (xc, yc, hx, hy, dz, cm)]
    numba_path = use_numba() if backend is None else backend == "numba"
    if numba_path:
        return _assemble_numba(*args, _G3_X, _G3_W, _GL_X, _GL_W)
    return _assemble_numpy(*args)
