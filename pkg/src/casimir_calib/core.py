"""Geometry, cantilever and sphere-plane electrostatics in the proximity force approximation.

All quantities are SI. Electron-volt inputs are converted where they enter
(see :func:`ev_to_rad_s`).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import constants as _sc

__all__ = [
    "PhysicalConstants",
    "CONSTANTS",
    "Geometry",
    "Cantilever",
    "ev_to_rad_s",
    "pfa_capacitance",
    "frequency_shift_from_gradient",
    "roughness_correction",
    "equivalent_casimir_voltage",
    "equivalent_voltage_by_gradient_matching",
    "cantilever_predictions",
    "RoughnessWarning",
]


class RoughnessWarning(UserWarning):
    """Gap too small for the perturbative roughness correction."""


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = _sc.hbar
    c: float = _sc.c
    eps0: float = _sc.epsilon_0
    k_B: float = _sc.k
    e: float = _sc.e


CONSTANTS = PhysicalConstants()


def _scalar_or_array(a):
    a = np.asarray(a, dtype=float)
    return float(a) if a.ndim == 0 else a


def ev_to_rad_s(energy_ev):
    """Convert a photon energy in eV to an angular frequency in rad/s."""
    return _scalar_or_array(np.asarray(energy_ev, dtype=float) * CONSTANTS.e / CONSTANTS.hbar)


@dataclass(frozen=True)
class Geometry:
    """Sphere-plane geometry.

    Attributes
    ----------
    R : float
        Radius of curvature of the sphere (m).
    a : float
        Diameter of the spherical mirror (m).
    h2_sphere, h2_plane : float
        Roughness variances of the two surfaces (m^2).
    xi : float, optional
        Lateral roughness correlation length (m). Only used as a validity check.
    """

    R: float = 30.9e-3
    a: float = 8.0e-3
    h2_sphere: float = 4.0e-18
    h2_plane: float = 2.4e-18
    xi: Optional[float] = None

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError(f"sphere radius must be positive, got R={self.R}")
        if self.a > 2 * self.R:
            raise ValueError(f"mirror diameter a={self.a} exceeds 2R={2 * self.R}")
        if self.h2_sphere < 0 or self.h2_plane < 0:
            raise ValueError("roughness variances must be non-negative")
        if self.xi is not None and not self.xi > 0:
            raise ValueError("correlation length xi must be positive")


@dataclass(frozen=True)
class Cantilever:
    """Rectangular cantilever resonator.

    ``E_young`` is not measured in the experiment; 1.69e11 Pa is the usual
    silicon value. ``m_eff`` defaults to the mass implied by a fixed-exponent
    electrostatic calibration with alpha = 6253 Hz^2 V^-2 V^2 and beta = 87 nm/V.
    """

    L: float = 22.56e-3
    w: float = 9.93e-3
    t: float = 330e-6
    rho: float = 2.3e3
    E_young: float = 1.69e11
    m_phys: float = 1.72e-4
    m_eff: float = 0.46e-3
    nu_p: float = 889.09
    k_stiff: float = 5.4e3

    def __post_init__(self):
        for name in ("L", "w", "t", "rho", "E_young", "m_phys", "m_eff", "nu_p", "k_stiff"):
            if not getattr(self, name) > 0:
                raise ValueError(f"cantilever field {name} must be positive")

    def mass_consistency(self) -> float:
        """Relative mismatch between ``m_phys`` and rho*L*w*t."""
        m = self.rho * self.L * self.w * self.t
        return abs(self.m_phys - m) / m


def _check_gap(x, R):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0) or np.any(x > R):
        raise ValueError(f"gap must satisfy 0 < x <= R (R={R}), got {x}")
    return x


def pfa_capacitance(x, R: float):
    """Sphere-plane capacitance and its first two gap derivatives.

    Returns ``(C, dC/dx, d2C/dx2)`` for ``C = 2 pi eps0 R ln(R/x)``.
    ``x == R`` is accepted (C vanishes there) but calibrations never get close.
    """
    if not R > 0:
        raise ValueError("R must be positive")
    x = _check_gap(x, R)
    k = 2.0 * math.pi * CONSTANTS.eps0 * R
    C = k * np.log(R / x)
    C1 = -k / x
    C2 = k / x**2
    if C.ndim == 0:
        return float(C), float(C1), float(C2)
    return C, C1, C2


def frequency_shift_from_gradient(F1, m_eff: float):
    """Shift of the squared resonance frequency caused by a force gradient (Hz^2)."""
    if not m_eff > 0:
        raise ValueError("effective mass must be positive")
    return _scalar_or_array(-np.asarray(F1, dtype=float) / (4.0 * math.pi**2 * m_eff))


def roughness_correction(x, h2_s: float, h2_p: float):
    """Multiplicative second-order roughness correction to the PFA electrostatic force.

    Emits :class:`RoughnessWarning` when the gap is below three rms amplitudes.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("gap must be positive")
    if h2_s < 0 or h2_p < 0:
        raise ValueError("roughness variances must be non-negative")
    h_max = math.sqrt(max(h2_s, h2_p))
    if np.any(x < 3 * h_max):
        warnings.warn(
            f"gap below 3 rms roughness amplitudes ({3 * h_max:.3g} m); correction is not perturbative",
            RoughnessWarning,
            stacklevel=2,
        )
    return _scalar_or_array(1.0 + (h2_s + h2_p) / x**2)


def equivalent_casimir_voltage(x):
    """Uncompensated bias whose electrostatic frequency shift mimics the ideal Casimir shift.

    Sphere-plane PFA, perfect conductors at zero temperature. Equating the
    force gradients ``pi eps0 R V^2 / x^2`` and ``pi^3 hbar c R / 120 x^4``
    gives ``V = (pi / sqrt(120)) sqrt(hbar c / eps0) / x``, about 17.1 mV at 1 um.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("gap must be positive")
    return _scalar_or_array(
        math.pi / math.sqrt(120.0) * math.sqrt(CONSTANTS.hbar * CONSTANTS.c / CONSTANTS.eps0) / x
    )


def equivalent_voltage_by_gradient_matching(x: float, R: float = 30.9e-3, dx_rel: float = 1e-4) -> float:
    """Brute-force version of :func:`equivalent_casimir_voltage`.

    Differentiates both PFA forces numerically and solves for the bias that
    makes the gradients equal. Used as an independent check; R cancels.
    """
    if not x > 0:
        raise ValueError("gap must be positive")
    h = dx_rel * x

    def f_el(s, V):  # attractive, magnitude pi eps0 R V^2 / s
        return -math.pi * CONSTANTS.eps0 * R * V**2 / s

    def f_cas(s):
        return 2 * math.pi * R * (-CONSTANTS.hbar * CONSTANTS.c * math.pi**2 / (720 * s**3))

    g_cas = (f_cas(x + h) - f_cas(x - h)) / (2 * h)
    g_el_unit = (f_el(x + h, 1.0) - f_el(x - h, 1.0)) / (2 * h)
    return math.sqrt(g_cas / g_el_unit)


def cantilever_predictions(c: Cantilever) -> tuple[float, float, float]:
    """Fundamental flexural frequency, stiffness and physical mass of a rectangular beam."""
    for name in ("L", "w", "t", "rho", "E_young"):
        if not getattr(c, name) > 0:
            raise ValueError(f"{name} must be positive")
    nu_p = 0.162 * c.t / c.L**2 * math.sqrt(c.E_young / c.rho)
    k = 1.036 * c.E_young * c.w * c.t**3 / c.L**3
    m_phys = c.rho * c.L * c.w * c.t
    return nu_p, k, m_phys
