"""Calibration fit models: bias parabola, curvature power law, capacitance
logarithm and interferometer fringes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from ..core import CONSTANTS
from ..electrostatics import VoltageParabola
from .lsq import FitError, FitResult, levenberg_marquardt, linear_lstsq

__all__ = [
    "DEFAULT_KEL_REL_ERROR",
    "PowerLawModel",
    "CapacitanceFit",
    "SinusoidFit",
    "aggregate_duplicates",
    "fit_parabola",
    "fit_power_law",
    "power_law_residuals",
    "fit_capacitance",
    "capacitance_residuals",
    "fit_sinusoid",
    "sinusoid_residuals",
]

#: relative K_el scatter left after drift removal, used when no sigma is supplied
DEFAULT_KEL_REL_ERROR = 0.04


def aggregate_duplicates(x, y, sigma):
    """Merge points sharing the same abscissa into inverse-variance weighted means."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), x.shape)
    ux, inv = np.unique(x, return_inverse=True)
    if ux.size == x.size:
        order = np.argsort(x, kind="stable")
        return x[order], y[order], np.array(sigma[order])
    w = 1.0 / sigma**2
    sw = np.bincount(inv, weights=w)
    ym = np.bincount(inv, weights=w * y) / sw
    return ux, ym, 1.0 / np.sqrt(sw)


def fit_parabola(V, nu_sq, sigma) -> tuple[VoltageParabola, FitResult]:
    """Fit ``nu^2 = c0 + c1 V + c2 V^2`` and convert to vertex form.

    The returned :class:`FitResult` holds the vertex parameters
    ``(nu0_sq, K_el, V0)`` with propagated covariance; ``K_el`` is positive
    for a downward parabola. A non-concave fit raises :class:`FitError`.
    """
    V, y, s = aggregate_duplicates(V, nu_sq, sigma)
    if V.size < 3:
        raise FitError(f"parabola needs at least 3 distinct bias values, got {V.size}")
    # centre the bias to keep the monomial basis well conditioned
    vm = 0.5 * (V.max() + V.min())
    u = V - vm
    A = np.column_stack([np.ones_like(u), u, u**2])
    lin = linear_lstsq(A, y, s, ("c0", "c1", "c2")) if V.size > 3 else _exact_quadratic(A, y, s)
    c0, c1, c2 = lin.values
    if not c2 < 0:
        raise FitError(f"bias parabola is not concave (curvature {-c2:g})")
    K = -c2
    u0 = -c1 / (2 * c2)
    nu0 = c0 - c1**2 / (4 * c2)
    # Jacobian of (nu0, K, V0) with respect to (c0, c1, c2)
    Jt = np.array(
        [
            [1.0, -c1 / (2 * c2), c1**2 / (4 * c2**2)],
            [0.0, 0.0, -1.0],
            [0.0, -1.0 / (2 * c2), c1 / (2 * c2**2)],
        ]
    )
    cov = Jt @ lin.covariance @ Jt.T
    fr = FitResult(
        ("nu0_sq", "K_el", "V0"),
        np.array([nu0, K, u0 + vm]),
        cov,
        lin.chi2,
        lin.dof,
        True,
        1,
        {"nu0_sq": "Hz^2", "K_el": "Hz^2/V^2", "V0": "V"},
    )
    err = fr.errors
    par = VoltageParabola(nu0, K, u0 + vm, err["nu0_sq"], err["K_el"], err["V0"])
    return par, fr


def _exact_quadratic(A, y, s):
    p = np.linalg.solve(A, y)
    Ai = np.linalg.inv(A / s[:, None])
    return FitResult(("c0", "c1", "c2"), p, Ai @ Ai.T, 0.0, 0)


# --------------------------------------------------------------------------- power law


@dataclass(frozen=True)
class PowerLawModel:
    """``K_el(V_pzt) = alpha (V0_pzt - V_pzt)^e``.

    ``alpha`` carries units Hz^2 V^-2 V^-e (recorded in ``alpha_unit``); the
    table convention labels it by the exponent instead.
    """

    alpha: float
    V0_pzt: float
    e: float
    beta: float
    V_pzt_max: float
    mode: str = "fixed"

    @property
    def x0(self) -> float:
        """Gap at the closest measured point, ``beta (V0_pzt - max V_pzt)``."""
        return self.beta * (self.V0_pzt - self.V_pzt_max)

    @property
    def alpha_unit(self) -> str:
        return f"Hz^2 V^-2 V^{-self.e:+.4g}"

    def __call__(self, V_pzt):
        return self.alpha * (self.V0_pzt - np.asarray(V_pzt, dtype=float)) ** self.e

    def distance_from_asymptote(self, V_pzt):
        return self.beta * (self.V0_pzt - np.asarray(V_pzt, dtype=float))

    def distance_from_curvature(self, K_el):
        K_el = np.asarray(K_el, dtype=float)
        if np.any(K_el <= 0):
            raise ValueError("curvature must be positive")
        return self.beta * (self.alpha / K_el) ** (-1.0 / self.e)

    def effective_mass(self, R: float) -> float:
        """Effective mass implied by ``alpha`` (meaningful for e = -2 only)."""
        return CONSTANTS.eps0 * R / (4 * math.pi * self.alpha * self.beta**2)

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "alpha_unit": self.alpha_unit,
            "V0_pzt": self.V0_pzt,
            "e": self.e,
            "beta": self.beta,
            "V_pzt_max": self.V_pzt_max,
            "x0": self.x0,
            "mode": self.mode,
        }


def power_law_residuals(V, K, s, fixed_e=None):
    """Weighted residual and Jacobian callables for the curvature power law."""
    V = np.asarray(V, dtype=float)
    K = np.asarray(K, dtype=float)
    s = np.asarray(s, dtype=float)

    def unpack(p):
        return (p[0], p[1], fixed_e) if fixed_e is not None else (p[0], p[1], p[2])

    def res(p):
        a, v0, e = unpack(p)
        return (a * (v0 - V) ** e - K) / s

    def jac(p):
        a, v0, e = unpack(p)
        d = v0 - V
        base = d**e
        cols = [base, a * e * d ** (e - 1)]
        if fixed_e is None:
            cols.append(a * base * np.log(d))
        return np.column_stack(cols) / s[:, None]

    return res, jac


def _initial_fixed(V, K, s):
    # K^-1/2 = (V0 - V) / sqrt(alpha) is linear in V
    y = K ** -0.5
    sy = 0.5 * y * s / K
    lin = linear_lstsq(np.column_stack([np.ones_like(V), V]), y, sy, ("b0", "b1"))
    b0, b1 = lin.values
    if not b1 < 0:
        raise FitError("curvature does not grow with V_pzt; cannot locate the contact asymptote")
    return 1.0 / b1**2, -b0 / b1


def fit_power_law(V_pzt, K_el, sigma=None, *, mode="fixed", beta=87e-9, e_fixed=-2.0, p0=None):
    """Fit the curvature-vs-PZT-voltage power law.

    ``mode`` is ``"fixed"`` (exponent held at ``e_fixed``) or ``"free"``.
    Free fits start from the fixed-exponent solution. ``sigma`` defaults to
    4 % of ``K_el``. Returns ``(PowerLawModel, FitResult)``.
    """
    V = np.asarray(V_pzt, dtype=float)
    K = np.asarray(K_el, dtype=float)
    s = DEFAULT_KEL_REL_ERROR * K if sigma is None else np.broadcast_to(np.asarray(sigma, float), K.shape)
    if mode not in ("fixed", "free"):
        raise ValueError("mode must be 'fixed' or 'free'")
    n_min = 4 if mode == "fixed" else 5
    if V.size < n_min:
        raise FitError(f"{mode} power-law fit needs at least {n_min} points, got {V.size}")
    if np.any(K <= 0):
        raise FitError("curvatures must be positive")
    vmax = V.max()

    def feasible(p):
        return p[1] > vmax and p[0] > 0 and (mode == "fixed" or p[2] < 0)

    if mode == "fixed":
        if p0 is None:
            # K^(-2/e) follows an inverse-square law with alpha^(-2/e) as prefactor
            g = -2.0 / e_fixed
            a_sq, v00 = _initial_fixed(V, K**g, g * s * K ** (g - 1))
            p0 = [a_sq ** (1.0 / g), v00]
        res, jac = power_law_residuals(V, K, s, fixed_e=e_fixed)
        names = ("alpha", "V0_pzt")
    else:
        if p0 is None:
            m_fix, _ = fit_power_law(V, K, s, mode="fixed", beta=beta)
            p0 = [m_fix.alpha, m_fix.V0_pzt, -2.0]
        res, jac = power_law_residuals(V, K, s)
        names = ("alpha", "V0_pzt", "e")
    # offsets matter through V0 - V, so scale V0 by the span of the data
    span = max(float(np.ptp(V)), 1e-3)
    scale = np.array([abs(p0[0]), span] + ([1.0] if mode == "free" else []))
    fr = levenberg_marquardt(res, jac, p0, names, scale=scale, feasible=feasible)
    fr.units.update({"alpha": "Hz^2 V^-2 V^-e", "V0_pzt": "V", "e": "1"})
    if not fr.converged:
        raise FitError("power-law fit did not converge", fr.trace)
    if fr["V0_pzt"] <= vmax * (1 + 1e-12):
        raise FitError("contact asymptote hit the largest measured V_pzt", fr.trace)
    e = fr["e"] if mode == "free" else e_fixed
    model = PowerLawModel(fr["alpha"], fr["V0_pzt"], e, beta, vmax, mode)
    return model, fr


# --------------------------------------------------------------------------- capacitance


@dataclass(frozen=True)
class CapacitanceFit:
    C0: float
    A: float
    V0_pzt: float
    beta: float

    def __call__(self, V_pzt):
        return self.C0 + self.A * np.log(self.beta * (self.V0_pzt - np.asarray(V_pzt, dtype=float)))

    def discrepancy(self, R: float) -> float:
        """Relative deviation of ``A`` from the PFA value ``-2 pi eps0 R``."""
        A_th = -2 * math.pi * CONSTANTS.eps0 * R
        return (self.A - A_th) / A_th


def capacitance_residuals(V, C, s, beta):
    """Weighted residual and Jacobian callables for ``(C0, A, V0_pzt)``."""
    s = np.broadcast_to(np.asarray(s, dtype=float), np.shape(C))

    def res(p):
        return (p[0] + p[1] * np.log(beta * (p[2] - V)) - C) / s

    def jac(p):
        d = p[2] - V
        return np.column_stack([np.ones_like(V), np.log(beta * d), p[1] / d]) / s[:, None]

    return res, jac


def fit_capacitance(V_pzt, C, sigma, *, beta=87e-9):
    """Fit ``C = C0 + A ln[beta (V0_pzt - V_pzt)]``. Returns ``(CapacitanceFit, FitResult)``."""
    V = np.asarray(V_pzt, dtype=float)
    C = np.asarray(C, dtype=float)
    s = np.broadcast_to(np.asarray(sigma, dtype=float), C.shape)
    if V.size < 4:
        raise FitError("capacitance fit needs at least 4 points")
    vmax = V.max()
    span = max(float(np.ptp(V)), 1e-3)

    def linear_part(v0):
        A = np.column_stack([np.ones_like(V), np.log(beta * (v0 - V))])
        return linear_lstsq(A, C, s, ("C0", "A"))

    # variable projection over the asymptote for a starting point
    def chi2_of(t):
        return linear_part(vmax + span * math.exp(t)).chi2

    opt = minimize_scalar(chi2_of, bounds=(math.log(1e-6), math.log(100.0)), method="bounded",
                          options={"xatol": 1e-10})
    v00 = vmax + span * math.exp(opt.x)
    c0, a0 = linear_part(v00).values

    res, jac = capacitance_residuals(V, C, s, beta)
    fr = levenberg_marquardt(
        res, jac, [c0, a0, v00], ("C0", "A", "V0_pzt"),
        scale=[max(abs(c0), abs(a0)), abs(a0), span], feasible=lambda p: p[2] > vmax,
    )
    fr.units.update({"C0": "F", "A": "F", "V0_pzt": "V"})
    if not fr.converged:
        raise FitError("capacitance fit did not converge", fr.trace)
    return CapacitanceFit(fr["C0"], fr["A"], fr["V0_pzt"], beta), fr


# --------------------------------------------------------------------------- fringes


@dataclass(frozen=True)
class SinusoidFit:
    I0: float
    I1: float
    beta: float
    phi: float
    wavelength: float

    def __call__(self, V_pzt):
        k = 4 * math.pi * self.beta / self.wavelength
        return self.I0 + self.I1 * np.sin(k * np.asarray(V_pzt, dtype=float) + self.phi)


def sinusoid_residuals(V, y, s, wavelength):
    """Weighted residual and Jacobian callables for ``(I0, a, b, beta)``."""
    s = np.broadcast_to(np.asarray(s, dtype=float), np.shape(y))
    conv = wavelength / (4 * math.pi)

    def res(p):
        k = p[3] / conv
        return (p[0] + p[1] * np.sin(k * V) + p[2] * np.cos(k * V) - y) / s

    def jac(p):
        k = p[3] / conv
        sk, ck = np.sin(k * V), np.cos(k * V)
        dk = (p[1] * ck - p[2] * sk) * V / conv
        return np.column_stack([np.ones_like(V), sk, ck, dk]) / s[:, None]

    return res, jac


def fit_sinusoid(V_pzt, intensity, sigma=None, *, wavelength=781e-9):
    """Fit interferometer fringes ``I0 + I1 sin(2 pi (2 beta V) / lambda + phi)``.

    One fringe corresponds to a displacement of half a wavelength. Returns
    ``(SinusoidFit, FitResult)``; the FitResult parameters are
    ``(I0, a, b, beta)`` with ``I1 sin(.. + phi) = a sin + b cos``.
    """
    V = np.asarray(V_pzt, dtype=float)
    y = np.asarray(intensity, dtype=float)
    if V.size < 5:
        raise FitError("fringe fit needs at least 5 points")
    s = np.ones_like(y) if sigma is None else np.broadcast_to(np.asarray(sigma, float), y.shape)
    span = float(np.ptp(V))
    if span <= 0:
        raise FitError("fringe data must span a voltage range")

    def design(k):
        return np.column_stack([np.ones_like(V), np.sin(k * V), np.cos(k * V)])

    # coarse periodogram: periods from 1/3 of the span up to the full span
    dv = np.min(np.diff(np.unique(V))) if V.size > 1 else span
    k_lo = 2 * math.pi / span
    k_hi = min(2 * math.pi / (2.5 * dv), 2 * math.pi / (span / 50))
    if k_hi <= k_lo:
        raise FitError("fringe period not resolvable from the sampling")
    ks = np.linspace(k_lo * 0.999, k_hi, 4000)
    chi = np.array([linear_lstsq(design(k), y, s, ("I0", "a", "b")).chi2 for k in ks])
    i = int(np.argmin(chi))
    lo, hi = ks[max(i - 1, 0)], ks[min(i + 1, ks.size - 1)]
    opt = minimize_scalar(lambda k: linear_lstsq(design(k), y, s, ("I0", "a", "b")).chi2,
                          bounds=(lo, hi), method="bounded", options={"xatol": 1e-12 * hi})
    k0 = float(opt.x)
    i0, a0, b0 = linear_lstsq(design(k0), y, s, ("I0", "a", "b")).values
    conv = wavelength / (4 * math.pi)
    res, jac = sinusoid_residuals(V, y, s, wavelength)
    amp = math.hypot(a0, b0)
    fr = levenberg_marquardt(res, jac, [i0, a0, b0, k0 * conv], ("I0", "a", "b", "beta"),
                             scale=[max(abs(i0), amp), amp, amp, k0 * conv])
    fr.units.update({"I0": "a.u.", "a": "a.u.", "b": "a.u.", "beta": "m/V"})
    if sigma is None and fr.dof > 0:
        # unit weights: take the scatter from the residuals
        fr.covariance = fr.covariance * fr.chi2_red
    beta = fr["beta"]
    if beta * span < wavelength / 2:
        raise FitError("data span less than one fringe period; period not resolvable")
    a, b = fr["a"], fr["b"]
    return SinusoidFit(fr["I0"], math.hypot(a, b), beta, math.atan2(b, a), wavelength), fr
