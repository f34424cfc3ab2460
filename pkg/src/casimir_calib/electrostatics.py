"""Electrostatic frequency shift with a distance-dependent contact potential.

The second gap derivative of the capacitor energy ``C(x)/2 (V - Vc(x))^2``
picks up terms in ``Vc'`` and ``Vc''``. They displace the vertex of the
bias parabola (the minimizing potential) and add a bias-independent
residual shift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.interpolate import CubicSpline

from .core import CONSTANTS, Cantilever, Geometry, pfa_capacitance

__all__ = [
    "Constant",
    "Exponential",
    "Logarithmic",
    "Tabulated",
    "ContactPotentialModel",
    "ElectrostaticCoefficients",
    "VoltageParabola",
    "energy_second_derivative",
    "regrouped_coefficients",
    "minimizing_potential",
    "electrostatic_curvature",
    "coulombian_frequency_sq",
    "residual_frequency_sq",
    "model_from_dict",
]


@dataclass(frozen=True)
class Constant:
    V: float

    def derivatives(self, x):
        x = np.asarray(x, dtype=float)
        return np.full_like(x, self.V), np.zeros_like(x), np.zeros_like(x)

    def __call__(self, x):
        return self.derivatives(x)[0]

    def to_dict(self):
        return {"kind": "constant", "V": self.V}


@dataclass(frozen=True)
class Exponential:
    """``V(x) = V0 + dV (1 - exp(-x / lam))``."""

    V0: float
    dV: float
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("exponential length scale must be positive")

    def derivatives(self, x):
        x = np.asarray(x, dtype=float)
        e = np.exp(-x / self.lam)
        return (
            self.V0 + self.dV * (1.0 - e),
            self.dV / self.lam * e,
            -self.dV / self.lam**2 * e,
        )

    def __call__(self, x):
        return self.derivatives(x)[0]

    def to_dict(self):
        return {"kind": "exponential", "V0": self.V0, "dV": self.dV, "lam": self.lam}


@dataclass(frozen=True)
class Logarithmic:
    """``V(x) = Vlog + dVlog ln(x / Lam)``. Defined for x > 0 only."""

    Vlog: float
    dVlog: float
    Lam: float

    def __post_init__(self):
        if not self.Lam > 0:
            raise ValueError("logarithmic length scale must be positive")

    def derivatives(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise ValueError("logarithmic model requires x > 0")
        return (
            self.Vlog + self.dVlog * np.log(x / self.Lam),
            self.dVlog / x,
            -self.dVlog / x**2,
        )

    def __call__(self, x):
        return self.derivatives(x)[0]

    def to_dict(self):
        return {"kind": "logarithmic", "Vlog": self.Vlog, "dVlog": self.dVlog, "Lam": self.Lam}


@dataclass(frozen=True)
class Tabulated:
    """Tabulated potential, interpolated by a C2 cubic spline.

    Evaluation outside ``[x[0], x[-1]]`` raises instead of extrapolating.
    """

    x: tuple
    V: tuple
    _spline: CubicSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        V = np.asarray(self.V, dtype=float)
        if x.ndim != 1 or x.shape != V.shape or x.size < 4:
            raise ValueError("tabulated potential needs matching 1-D x and V with at least 4 nodes")
        if np.any(np.diff(x) <= 0):
            raise ValueError("tabulated x must be strictly increasing")
        object.__setattr__(self, "x", tuple(x))
        object.__setattr__(self, "V", tuple(V))
        object.__setattr__(self, "_spline", CubicSpline(x, V, bc_type="not-a-knot"))

    def derivatives(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.x[0], self.x[-1]
        if np.any(x < lo * (1 - 1e-12)) or np.any(x > hi * (1 + 1e-12)):
            raise ValueError(f"x outside tabulated range [{lo:g}, {hi:g}]")
        s = self._spline
        return s(x), s(x, 1), s(x, 2)

    def __call__(self, x):
        return self.derivatives(x)[0]

    def to_dict(self):
        return {"kind": "tabulated", "x": list(self.x), "V": list(self.V)}


ContactPotentialModel = Union[Constant, Exponential, Logarithmic, Tabulated]

_KINDS = {"constant": Constant, "exponential": Exponential, "logarithmic": Logarithmic, "tabulated": Tabulated}


def model_from_dict(d: dict) -> ContactPotentialModel:
    d = dict(d)
    kind = d.pop("kind")
    try:
        cls = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown potential model kind {kind!r}") from None
    return cls(**d)


@dataclass(frozen=True)
class ElectrostaticCoefficients:
    """Coefficients of ``E'' = A (V - Vc + B)^2 + D``."""

    A: float
    B: float
    D: float


@dataclass(frozen=True)
class VoltageParabola:
    """``nu^2(V) = nu0_sq - K_el (V - V0)^2`` at one gap. K_el is reported positive."""

    nu0_sq: float
    K_el: float
    V0: float
    sigma_nu0_sq: float = 0.0
    sigma_K_el: float = 0.0
    sigma_V0: float = 0.0

    def __call__(self, V):
        return self.nu0_sq - self.K_el * (np.asarray(V) - self.V0) ** 2


def _terms(x, vc, R):
    C, C1, C2 = pfa_capacitance(x, R)
    Vc, Vc1, Vc2 = vc.derivatives(x)
    mix = 2.0 * C1 * Vc1 + C * Vc2
    return C, C1, C2, Vc, Vc1, Vc2, mix


def _out(a):
    a = np.asarray(a, dtype=float)
    return float(a) if a.ndim == 0 else a


def energy_second_derivative(x, V, vc: ContactPotentialModel, g: Geometry):
    """``d2/dx2 [C(x)/2 (V - Vc(x))^2]`` in J/m^2."""
    C, C1, C2, Vc, Vc1, Vc2, mix = _terms(x, vc, g.R)
    u = np.asarray(V, dtype=float) - Vc
    return _out(0.5 * C2 * u**2 - mix * u + C * Vc1**2)


def regrouped_coefficients(x, vc: ContactPotentialModel, g: Geometry) -> ElectrostaticCoefficients:
    C, C1, C2, Vc, Vc1, Vc2, mix = _terms(x, vc, g.R)
    A = 0.5 * C2
    B = -mix / C2
    D = C * Vc1**2 - mix**2 / (2.0 * C2)
    return ElectrostaticCoefficients(_out(A), _out(B), _out(D))


def minimizing_potential(x, vc: ContactPotentialModel, g: Geometry):
    """Bias that maximizes the resonance frequency at gap ``x``."""
    C, C1, C2, Vc, Vc1, Vc2, mix = _terms(x, vc, g.R)
    return _out(Vc + mix / C2)


def electrostatic_curvature(x, R: float, m_eff: float):
    """Parabola curvature ``eps0 R / (4 pi m_eff x^2)`` in Hz^2/V^2."""
    if not m_eff > 0:
        raise ValueError("effective mass must be positive")
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0) or np.any(x >= R):
        raise ValueError("gap must satisfy 0 < x < R")
    return _out(CONSTANTS.eps0 * R / (4.0 * math.pi * m_eff * x**2))


def residual_frequency_sq(x, vc: ContactPotentialModel, g: Geometry, m_eff: float):
    """Bias-independent electrostatic shift ``-D / (4 pi^2 m_eff)`` in Hz^2."""
    if not m_eff > 0:
        raise ValueError("effective mass must be positive")
    C, C1, C2, Vc, Vc1, Vc2, mix = _terms(x, vc, g.R)
    return _out((-C * Vc1**2 + mix**2 / (2.0 * C2)) / (4.0 * math.pi**2 * m_eff))


def coulombian_frequency_sq(x, V, vc: ContactPotentialModel, g: Geometry, cant: Cantilever, nu0_sq: float):
    """Squared resonance frequency under Coulomb forces alone."""
    m = cant.m_eff
    C, C1, C2, Vc, Vc1, Vc2, mix = _terms(x, vc, g.R)
    V0 = Vc + mix / C2
    shift_v = C2 / (8.0 * math.pi**2 * m) * (np.asarray(V, dtype=float) - V0) ** 2
    resid = (-C * Vc1**2 + mix**2 / (2.0 * C2)) / (4.0 * math.pi**2 * m)
    return _out(nu0_sq - shift_v + resid)
