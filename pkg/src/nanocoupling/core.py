"""Physical constants and the small closed-form relations shared by all modules.

Unit conventions
----------------
SI throughout. Rates (cavity linewidth ``kappa``, spin linewidth ``gamma``,
couplings ``G``) are stored as angular frequencies in rad/s. Conversion to
``<name>/2pi`` in Hz happens only when results are written out; use
:func:`to_hz` / :func:`from_hz` at those boundaries.
"""

from dataclasses import dataclass
import math

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PhysicalConstants:
    """CODATA 2018 values, fixed so that golden outputs stay reproducible."""

    mu_B: float = 9.2740100783e-24  # J/T
    hbar: float = 1.054571817e-34  # J s
    k_B: float = 1.380649e-23  # J/K
    mu_0: float = 1.25663706212e-6  # T m/A


CONSTANTS = PhysicalConstants()
MU_B = CONSTANTS.mu_B
HBAR = CONSTANTS.hbar
K_B = CONSTANTS.k_B
MU_0 = CONSTANTS.mu_0


class DomainError(ValueError):
    """An argument lies outside the physical domain of an operation."""


def to_hz(rate):
    """Angular rate (rad/s) to the reported ``rate/2pi`` in Hz."""
    return np.asarray(rate) / TWO_PI if np.ndim(rate) else rate / TWO_PI


def from_hz(freq):
    """Reported ``rate/2pi`` in Hz to the internal angular rate."""
    return np.asarray(freq) * TWO_PI if np.ndim(freq) else freq * TWO_PI


def rms_supercurrent(omega_r, Z0):
    """Root-mean-square vacuum current of the resonator mode.

    ``i_sc = omega_r * sqrt(pi * hbar / (4 * Z0))``; about 11.3 nA for a
    1.4 GHz, 50 ohm line.
    """
    if not Z0 > 0:
        raise DomainError(f"Z0 must be positive, got {Z0!r}")
    if omega_r < 0:
        raise DomainError(f"omega_r must be non-negative, got {omega_r!r}")
    return omega_r * math.sqrt(math.pi * HBAR / (4.0 * Z0))


def resonance_field(omega_r, g):
    """Field (T) at which the Zeeman splitting ``g mu_B H / hbar`` equals omega_r."""
    if not g > 0:
        raise DomainError(f"g must be positive, got {g!r}")
    return HBAR * omega_r / (g * MU_B)


def larmor_frequency(H, g):
    """Spin transition frequency ``Omega_S = g mu_B H / hbar`` in rad/s."""
    return g * MU_B * np.asarray(H, dtype=float) / HBAR


def spin_polarization(H, T, S=0.5, g=2.0):
    """Thermal polarization ``<S_z>_T / S = tanh(g mu_B H S / k_B T)``.

    Returns 1 at ``T == 0`` for any positive field and 0 when both vanish.
    Accepts scalars or arrays (broadcast).
    """
    H_arr = np.asarray(H, dtype=float)
    T_arr = np.asarray(T, dtype=float)
    if np.any(T_arr < 0):
        raise DomainError("temperature must be non-negative")
    if np.any(H_arr < 0):
        raise DomainError("field magnitude must be non-negative")
    if not g > 0 or not S > 0:
        raise DomainError("g and S must be positive")
    zeeman = g * MU_B * H_arr * S
    with np.errstate(divide="ignore", invalid="ignore"):
        x = zeeman / (K_B * T_arr)
    out = np.where(T_arr == 0, np.where(H_arr > 0, 1.0, 0.0), np.tanh(np.nan_to_num(x, nan=0.0)))
    if out.ndim == 0:
        return float(out)
    return out
