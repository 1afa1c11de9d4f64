"""Transmission forward model and fits of cavity linewidths.

Linewidth convention: ``kappa`` is the half width at half maximum of
``|S21|^2`` (rad/s). With the spin ensemble the cavity width follows
``kappa(H) = kappa_r + G_N^2 gamma / ((omega_r - Omega_S)^2 + gamma^2)``
with ``Omega_S = g mu_B H / hbar``, and the transmission is

    S21(omega) = kappa_c / (i (omega - omega_r) + kappa_r
                            + G_N^2 / (i (omega - Omega_S) + gamma))

so the width of ``|S21|^2`` reduces to ``kappa(H)`` when ``G_N << gamma``.

Fits use ``scipy.optimize.least_squares`` (MINPACK Levenberg-Marquardt) on
log-transformed rates, which keeps them positive; uncertainties come from the
Jacobian at the optimum.
"""

from dataclasses import dataclass, field
import csv
import json
import math

import numpy as np
from scipy.optimize import least_squares

from .core import DomainError, HBAR, MU_B, TWO_PI, larmor_frequency, resonance_field

MAX_NFEV = 2000


class SchemaError(ValueError):
    """Malformed input data file (message carries the line number)."""


@dataclass(frozen=True)
class TransmissionParams:
    """Rates in rad/s; ``kappa_c`` defaults to ``kappa_r / 2``."""

    omega_r: float
    kappa_r: float
    G_N: float
    gamma: float
    kappa_c: float = None
    g: float = 2.0

    def __post_init__(self):
        if self.kappa_c is None:
            object.__setattr__(self, "kappa_c", 0.5 * self.kappa_r)
        if not (self.omega_r > 0 and self.kappa_r > 0 and self.gamma > 0 and self.kappa_c > 0 and self.g > 0):
            raise DomainError("omega_r, kappa_r, kappa_c, gamma and g must be positive")
        if self.G_N < 0:
            raise DomainError("G_N must be non-negative")
        if self.kappa_c > self.kappa_r:
            raise DomainError("kappa_c cannot exceed kappa_r")

    @property
    def H_res(self):
        return resonance_field(self.omega_r, self.g)

    def strong_coupling(self):
        """``True`` when ``G_N`` exceeds both linewidths."""
        return self.G_N > max(self.kappa_r, self.gamma)


def kappa_of_field(H, p):
    """Cavity half-width (rad/s) at field ``H`` (T)."""
    delta = p.omega_r - larmor_frequency(H, p.g)
    out = p.kappa_r + p.G_N ** 2 * p.gamma / (delta ** 2 + p.gamma ** 2)
    return float(out) if np.ndim(out) == 0 else out


def s21(omega, H, p):
    """Complex transmission at probe frequency ``omega`` (rad/s) and field ``H``."""
    omega = np.asarray(omega, dtype=float)
    Om = larmor_frequency(H, p.g)
    spin = p.G_N ** 2 / (1j * (omega - Om) + p.gamma)
    return p.kappa_c / (1j * (omega - p.omega_r) + p.kappa_r + spin)


@dataclass(frozen=True)
class LorentzFit:
    omega_r: float
    kappa: float
    amplitude: float
    residual: float
    converged: bool
    message: str = ""


@dataclass(frozen=True)
class FitResult:
    """Outcome of a model fit; rates in rad/s."""

    estimates: dict
    sigmas: dict
    residual: float
    converged: bool
    warnings: tuple = ()
    H_res: float = math.nan
    extra: dict = field(default_factory=dict)

    def to_json(self):
        doc = {
            "estimates": {f"{k}_over_2pi_Hz": v / TWO_PI for k, v in self.estimates.items()},
            "sigmas": {f"{k}_over_2pi_Hz": v / TWO_PI for k, v in self.sigmas.items()},
            "residual": self.residual,
            "converged": self.converged,
            "warnings": list(self.warnings),
            "H_res_T": self.H_res,
        }
        doc.update(self.extra)
        return doc

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _sigmas(res, scale):
    """1-sigma of the log-parameters, from the Jacobian at the optimum."""
    J = res.jac
    n, m = J.shape
    dof = max(n - m, 1)
    s2 = 2.0 * res.cost / dof
    try:
        cov = np.linalg.pinv(J.T @ J) * s2
    except np.linalg.LinAlgError:
        return np.full(m, np.inf), np.inf
    return np.sqrt(np.abs(np.diag(cov))) * scale, np.linalg.cond(J.T @ J)


def _half_width(x, y, i_peak, level):
    """Distance from the peak to the nearest ``level`` crossings (mean of both sides)."""
    widths = []
    for step in (-1, 1):
        i = i_peak
        while 0 <= i + step < len(y) and y[i + step] > level:
            i += step
        j = i + step
        if 0 <= j < len(y):
            # linear interpolation between samples i and j
            t = (y[i] - level) / (y[i] - y[j]) if y[i] != y[j] else 0.0
            widths.append(abs(x[i] + t * (x[j] - x[i]) - x[i_peak]))
    return float(np.mean(widths)) if widths else math.nan


def fit_lorentzian(omega, power):
    """Fit ``A kappa^2 / ((omega - omega_0)^2 + kappa^2)`` to a ``|S21|^2`` trace.

    Initialization from the trace maximum and its half-maximum crossings.
    A trace without a resolved peak returns ``converged=False``.
    """
    w = np.asarray(omega, dtype=float)
    P = np.asarray(power, dtype=float)
    if w.shape != P.shape or w.ndim != 1 or len(w) < 8:
        raise DomainError("need at least 8 (omega, |S21|^2) points")
    order = np.argsort(w)
    w, P = w[order], P[order]
    i0 = int(np.argmax(P))
    peak, floor = P[i0], P.min()
    span = w[-1] - w[0]
    if not peak > 0 or peak - floor <= 1e-9 * peak:
        return LorentzFit(math.nan, math.nan, math.nan, math.inf, False, "flat trace")
    k0 = _half_width(w, P, i0, 0.5 * peak)
    if not k0 > 0:
        k0 = 0.1 * span
    w0 = w[i0]

    def model(q):
        c, k, A = w0 + q[0] * k0, k0 * math.exp(q[1]), peak * math.exp(q[2])
        return A * k * k / ((w - c) ** 2 + k * k)

    res = least_squares(lambda q: (model(q) - P) / peak, np.zeros(3), method="lm",
                        x_scale="jac", max_nfev=MAX_NFEV, xtol=1e-14, ftol=1e-14, gtol=1e-14)
    q = res.x
    center, kappa = w0 + q[0] * k0, k0 * math.exp(q[1])
    ok = bool(res.success) and w[0] <= center <= w[-1] and kappa < span
    rms = math.sqrt(2.0 * res.cost / len(w))
    return LorentzFit(float(center), float(kappa), float(peak * math.exp(q[2])), rms, bool(ok), res.message)


def _kappa_init(H, kappa, omega_r, g):
    detune = np.abs(omega_r - larmor_frequency(H, g))
    n_far = max(1, int(round(0.2 * len(H))))
    far = np.argsort(-detune, kind="stable")[:n_far]
    k_r = float(np.median(kappa[far]))
    excess = kappa - k_r
    i0 = int(np.argmax(excess))
    height = excess[i0]
    Om = larmor_frequency(H, g)
    order = np.argsort(Om)
    hw = _half_width(Om[order], excess[order], int(np.where(order == i0)[0][0]), 0.5 * height)
    gamma = hw if hw > 0 else 0.25 * (Om.max() - Om.min())
    height = max(height, 1e-6 * k_r)
    return k_r, math.sqrt(height * gamma), gamma


def fit_kappa_curve(H, kappa, omega_r=TWO_PI * 1.4e9, g=2.0, sigma=None):
    """Least-squares fit of ``kappa(H)`` (rad/s) for ``kappa_r``, ``G_N``, ``gamma``.

    Initialization: ``kappa_r`` from the median of the 20 % most detuned
    points, ``gamma`` from the half width of the excess peak, ``G_N`` from
    its height. ``sigma`` (rad/s) weights the residuals when given.
    """
    H = np.asarray(H, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    if H.shape != kappa.shape or H.ndim != 1 or len(H) < 5:
        raise DomainError("need at least 5 (H, kappa) points")
    if not np.all(np.isfinite(kappa)) or np.any(kappa <= 0):
        raise DomainError("kappa values must be positive and finite")
    sig = np.ones_like(kappa) if sigma is None else np.asarray(sigma, dtype=float)
    p0 = np.array(_kappa_init(H, kappa, omega_r, g))
    delta = omega_r - larmor_frequency(H, g)
    scale = float(np.median(kappa))

    def resid(q):
        k_r, G, gam = p0 * np.exp(q)
        return (k_r + G * G * gam / (delta ** 2 + gam ** 2) - kappa) / (sig * scale if sigma is None else sig)

    res = least_squares(resid, np.zeros(3), method="lm", x_scale="jac", max_nfev=MAX_NFEV,
                        xtol=1e-14, ftol=1e-14, gtol=1e-14)
    est = p0 * np.exp(res.x)
    rel, cond = _sigmas(res, 1.0)
    sig_abs = np.maximum(rel * est, np.finfo(float).eps * est)
    names = ("kappa_r", "G_N", "gamma")
    notes = []
    if np.count_nonzero(np.abs(delta) > 3.0 * est[2]) < 2:
        notes.append("insufficient detuned coverage: fewer than 2 points beyond 3 gamma")
    if not np.isfinite(cond) or cond > 1e12:
        notes.append(f"ill-conditioned normal matrix (cond={cond:.3g})")
    residual = math.sqrt(2.0 * res.cost) * (scale if sigma is None else 1.0)
    return FitResult(
        estimates=dict(zip(names, map(float, est))),
        sigmas=dict(zip(names, map(float, sig_abs))),
        residual=residual,
        converged=bool(res.success) and bool(np.all(np.isfinite(est))),
        warnings=tuple(notes),
        H_res=resonance_field(omega_r, g),
    )


def fit_sqrtN(N_eff, G_N, sigma=None):
    """Slope ``G_1`` of ``G_N = G_1 sqrt(N_eff)`` through the origin.

    Weighted least squares; by default each point carries a relative error
    measured against the model (weight ``1/N_eff``, so zero-``N_eff`` points
    drop out). Returns ``(G_1, sigma_G_1)``.
    """
    N = np.asarray(N_eff, dtype=float)
    G = np.asarray(G_N, dtype=float)
    if N.shape != G.shape or N.ndim != 1 or len(N) < 2:
        raise DomainError("need at least 2 (N_eff, G_N) points")
    if np.any(N < 0):
        raise DomainError("N_eff must be non-negative")
    if not np.any(N > 0):
        raise DomainError("all N_eff are zero")
    if sigma is None:
        keep = N > 0
        N, G = N[keep], G[keep]
        wts = 1.0 / N
    else:
        wts = 1.0 / np.asarray(sigma, dtype=float) ** 2
    x = np.sqrt(N)
    sxx = float(np.sum(wts * x * x))
    slope = float(np.sum(wts * x * G)) / sxx
    r = G - slope * x
    dof = max(len(N) - 1, 1)
    err = math.sqrt(float(np.sum(wts * r * r)) / dof / sxx)
    return slope, max(err, np.finfo(float).eps * abs(slope))


@dataclass(frozen=True, eq=False)
class TransmissionMap:
    """``s21_abs[i, j]`` at field ``H[i]`` and frequency ``omega[j]``; ridge per field."""

    H: np.ndarray
    omega: np.ndarray
    s21_abs: np.ndarray
    ridge: np.ndarray

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["H_T", "omega_over_2pi_Hz", "s21_abs"])
            for i, h in enumerate(self.H):
                for j, om in enumerate(self.omega):
                    w.writerow([repr(float(h)), repr(float(om / TWO_PI)), repr(float(self.s21_abs[i, j]))])

    def write_ridge_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["H_T", "omega_over_2pi_Hz"])
            for h, om in zip(self.H, self.ridge):
                w.writerow([repr(float(h)), repr(float(om / TWO_PI))])


def transmission_map(p, omega, H):
    """``|S21|`` on the (H, omega) grid plus the frequency of maximum transmission per field."""
    omega = np.asarray(omega, dtype=float)
    H = np.asarray(H, dtype=float)
    if omega.ndim != 1 or H.ndim != 1 or len(omega) < 1 or len(H) < 1:
        raise DomainError("omega and H grids must be non-empty 1D arrays")
    amp = np.abs(s21(omega[None, :], H[:, None], p))
    return TransmissionMap(H=H, omega=omega, s21_abs=amp, ridge=omega[np.argmax(amp, axis=1)])


def kappa_from_map(tmap):
    """Per-field ``fit_lorentzian`` on ``|S21|^2``; returns ``(H, kappa, converged)``."""
    fits = [fit_lorentzian(tmap.omega, row ** 2) for row in tmap.s21_abs]
    return (tmap.H.copy(), np.array([f.kappa for f in fits]), np.array([f.converged for f in fits]))


def field_linewidth_H(gamma, g=2.0):
    """Spin half-width expressed in field units (T)."""
    return HBAR * gamma / (g * MU_B)


def read_table(path, header):
    """Numeric rows of a CSV whose first line must equal ``header``."""
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise FileNotFoundError(f"data file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            head = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}:1: empty file") from None
        if head != list(header):
            raise SchemaError(f"{path}:1: expected header {','.join(header)}, got {','.join(head)}")
        out = []
        for n, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}:{n}: expected {len(header)} columns, got {len(row)}")
            try:
                out.append([float(c) for c in row])
            except ValueError:
                raise SchemaError(f"{path}:{n}: non-numeric value in {row!r}") from None
        if not out:
            raise SchemaError(f"{path}: no data rows")
        return np.array(out)


KAPPA_HEADER = ("H_T", "kappa_over_2pi_Hz")
TRACE_HEADER = ("H_T", "omega_over_2pi_Hz", "s21_abs")


def read_kappa_csv(path):
    """``(H, kappa)`` with kappa converted to rad/s."""
    a = read_table(path, KAPPA_HEADER)
    return a[:, 0], a[:, 1] * TWO_PI


def write_kappa_csv(path, H, kappa):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(KAPPA_HEADER)
        for h, k in zip(H, kappa):
            w.writerow([repr(float(h)), repr(float(k / TWO_PI))])


def read_trace_csv(path):
    """Trace blocks grouped by field: ``{H: (omega, s21_abs)}`` in file order."""
    a = read_table(path, TRACE_HEADER)
    blocks = {}
    for h, f, s in a:
        blocks.setdefault(float(h), ([], []))
        blocks[float(h)][0].append(f * TWO_PI)
        blocks[float(h)][1].append(s)
    return {h: (np.array(o), np.array(s)) for h, (o, s) in blocks.items()}


def synthetic_kappa(H, p, rel_noise, seed):
    """``kappa_of_field`` with seeded multiplicative Gaussian noise (PCG64)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    k = kappa_of_field(np.asarray(H, dtype=float), p)
    return k * (1.0 + rel_noise * rng.standard_normal(np.shape(k)))
