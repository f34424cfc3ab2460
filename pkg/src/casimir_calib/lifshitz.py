"""Finite-temperature Lifshitz free energy between parallel plates and its
proximity-force mapping onto the sphere-plane frequency shift.

Dimensionless variables: ``y = kappa x`` where kappa is the imaginary
normal wave vector, ``gamma = 2 pi k_B T x / (hbar c)``. The Matsubara term
``m`` integrates ``y`` from ``m gamma``. The free energy per unit area is

    E = k_B T / (2 pi x^2) sum'_m sum_p int_{m gamma}^inf y ln(1 - r_p^2 e^{-2y}) dy

with the m = 0 term at half weight. The ``y dy`` measure reproduces
``-pi^2 hbar c / (720 x^3)`` for perfect mirrors at T = 0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.integrate import quad, quad_vec, simpson
from scipy.special import zeta

from .core import CONSTANTS, Cantilever, Geometry, ev_to_rad_s

__all__ = [
    "Drude",
    "TabulatedLoss",
    "PerfectConductor",
    "MaterialResponse",
    "LifshitzConfig",
    "ReflectionPair",
    "LifshitzError",
    "PFAWarning",
    "GOLD_DRUDE",
    "permittivity_imaginary_axis",
    "fresnel_reflection",
    "matsubara_terms",
    "plane_plane_free_energy",
    "ideal_plane_plane_energy",
    "sphere_plane_force",
    "sphere_plane_casimir_shift",
    "ideal_casimir_coefficient",
    "load_optical_table",
    "bundled_gold_table",
    "material_from_dict",
]

Y_UPPER = 35.0  # e^{-2y} < 1e-30 beyond this


class LifshitzError(RuntimeError):
    """Matsubara sum or quadrature failed to converge."""


class PFAWarning(UserWarning):
    """Gap not small compared with the sphere radius."""


@dataclass(frozen=True)
class Drude:
    """Drude metal, ``eps(i xi) = 1 + wp^2 / (xi (xi + gp))``. Frequencies in rad/s."""

    omega_p: float
    gamma_p: float

    def __post_init__(self):
        if not (self.omega_p > 0 and self.gamma_p > 0):
            raise ValueError("Drude plasma frequency and relaxation rate must be positive")

    @classmethod
    def from_ev(cls, omega_p_ev: float, gamma_p_ev: float) -> "Drude":
        return cls(ev_to_rad_s(omega_p_ev), ev_to_rad_s(gamma_p_ev))

    def loss(self, omega):
        """Imaginary part of eps on the real axis."""
        omega = np.asarray(omega, dtype=float)
        return self.omega_p**2 * self.gamma_p / (omega * (omega**2 + self.gamma_p**2))

    def to_dict(self):
        return {"kind": "drude", "omega_p": self.omega_p, "gamma_p": self.gamma_p}


@dataclass(frozen=True)
class PerfectConductor:
    """Ideal mirror: |r|^2 = 1 for both polarizations at every frequency."""

    def to_dict(self):
        return {"kind": "perfect"}


@dataclass(frozen=True)
class TabulatedLoss:
    """Measured loss ``eps''(omega)`` with a Drude extrapolation below the first point.

    The imaginary-axis permittivity follows from the Kramers-Kronig integral
    ``1 + (2/pi) int_0^inf w eps''(w) / (w^2 + xi^2) dw``. The part below
    ``omega[0]`` is integrated analytically with the Drude loss; nothing is
    added above ``omega[-1]``.
    """

    omega: tuple
    eps2: tuple
    drude: Drude

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=float)
        e2 = np.asarray(self.eps2, dtype=float)
        if w.size == 0:
            raise ValueError("optical table is empty")
        if w.shape != e2.shape or w.ndim != 1 or w.size < 3:
            raise ValueError("optical table needs matching 1-D columns with at least 3 rows")
        if np.any(np.diff(w) <= 0) or w[0] <= 0:
            raise ValueError("table frequencies must be positive and strictly increasing")
        if np.any(e2 < 0):
            raise ValueError("loss eps'' must be non-negative")
        object.__setattr__(self, "omega", tuple(w))
        object.__setattr__(self, "eps2", tuple(e2))

    def to_dict(self):
        return {"kind": "tabulated", "omega": list(self.omega), "eps2": list(self.eps2),
                "drude": self.drude.to_dict()}


MaterialResponse = Union[Drude, TabulatedLoss, PerfectConductor]

#: gold Drude parameters used for the low-frequency extrapolation (7.5 eV, 0.061 eV)
GOLD_DRUDE = Drude.from_ev(7.5, 0.061)


def material_from_dict(d: dict) -> MaterialResponse:
    kind = d.get("kind")
    if kind == "drude":
        if "omega_p_ev" in d:
            return Drude.from_ev(d["omega_p_ev"], d["gamma_p_ev"])
        return Drude(d["omega_p"], d["gamma_p"])
    if kind == "perfect":
        return PerfectConductor()
    if kind == "tabulated":
        drude = material_from_dict(d["drude"]) if "drude" in d else GOLD_DRUDE
        if "path" in d:
            return load_optical_table(d["path"], drude)
        if d.get("bundled"):
            return bundled_gold_table()
        return TabulatedLoss(tuple(d["omega"]), tuple(d["eps2"]), drude)
    raise ValueError(f"unknown material kind {kind!r}")


@dataclass(frozen=True)
class LifshitzConfig:
    """Controls for the Matsubara sum and the y quadrature.

    ``T = 0`` replaces the Matsubara sum by a frequency integral.
    ``matsubara_cutoff`` caps the index; by default the sum runs until
    ``m gamma`` exceeds ``y_upper`` where every term is below ``e^{-2 y_upper}``.
    """

    T: float = 300.0
    matsubara_cutoff: Optional[int] = None
    quad_rel_tol: float = 1e-8
    y_upper: float = Y_UPPER
    tail_tol: float = 1e-6
    zero_frequency: str = "drude"

    def __post_init__(self):
        if self.T < 0:
            raise ValueError("temperature must be non-negative")
        for name in ("quad_rel_tol", "tail_tol"):
            v = getattr(self, name)
            if not 0 < v <= 1e-2:
                raise ValueError(f"{name} must lie in (0, 1e-2]")
        if self.zero_frequency != "drude":
            raise ValueError("only the Drude zero-frequency prescription is implemented")

    def to_dict(self):
        return {
            "T": self.T,
            "matsubara_cutoff": self.matsubara_cutoff,
            "quad_rel_tol": self.quad_rel_tol,
            "y_upper": self.y_upper,
            "tail_tol": self.tail_tol,
            "zero_frequency": self.zero_frequency,
        }


@dataclass(frozen=True)
class ReflectionPair:
    r_TE: float
    r_TM: float


# --------------------------------------------------------------------------- permittivity


def _kk_tabulated(mat: TabulatedLoss, xi):
    w = np.asarray(mat.omega)
    e2 = np.asarray(mat.eps2)
    xi = np.atleast_1d(xi)
    # table part, integrated in ln(omega)
    f = (w**2 * e2)[None, :] / (w[None, :] ** 2 + xi[:, None] ** 2)
    table = simpson(f, x=np.log(w), axis=1)
    # Drude part on [0, w0]: wp^2 gp int dw / ((w^2 + gp^2)(w^2 + xi^2))
    wp, gp, w0 = mat.drude.omega_p, mat.drude.gamma_p, w[0]
    a_g = np.arctan(w0 / gp) / gp
    a_x = np.arctan(w0 / xi) / xi
    den = xi**2 - gp**2
    near = np.abs(den) < 1e-6 * gp**2
    safe = np.where(near, 1.0, den)
    low = np.where(
        near,
        # limit xi -> gp: d/d(s) of atan(w0/s)/s over d(s^2)
        (np.arctan(w0 / gp) / gp + w0 / (gp**2 + w0**2)) / (2 * gp**2),
        (a_g - a_x) / safe,
    )
    low = wp**2 * gp * low
    return 1.0 + (2.0 / math.pi) * (table + low)


def permittivity_imaginary_axis(mat: MaterialResponse, xi):
    """Dielectric function at imaginary frequency ``i xi`` (xi in rad/s)."""
    xi_a = np.asarray(xi, dtype=float)
    if np.any(xi_a <= 0):
        raise ValueError("imaginary frequency must be positive")
    if isinstance(mat, Drude):
        eps = 1.0 + mat.omega_p**2 / (xi_a * (xi_a + mat.gamma_p))
    elif isinstance(mat, TabulatedLoss):
        eps = _kk_tabulated(mat, xi_a).reshape(xi_a.shape)
    elif isinstance(mat, PerfectConductor):
        eps = np.full_like(xi_a, np.inf)
    else:
        raise TypeError(f"unsupported material {type(mat).__name__}")
    return float(eps) if np.ndim(eps) == 0 else eps


# --------------------------------------------------------------------------- reflection


def _reflection_sq(p, eps):
    """Squared TE and TM Fresnel amplitudes for ``p = y / (m gamma) >= 1``."""
    s = np.sqrt(eps - 1.0 + p**2)
    r_tm = (s - eps * p) / (s + eps * p)
    r_te = -(s - p) / (s + p)
    return r_te**2, r_tm**2


def fresnel_reflection(y: float, m: int, gamma: float, eps: float) -> ReflectionPair:
    """Fresnel amplitudes at Matsubara index ``m``.

    For ``m = 0`` the Drude limit is returned: ``r_TM = -1`` and ``r_TE = 0``
    (perfect mirrors, ``eps = inf``, give ``r_TE = -1``).
    """
    if m < 0:
        raise ValueError("Matsubara index must be non-negative")
    if m == 0:
        return ReflectionPair(-1.0 if math.isinf(eps) else 0.0, -1.0)
    if y < m * gamma * (1 - 1e-12):
        raise ValueError(f"y={y} below the lower integration limit m*gamma={m * gamma}")
    if math.isinf(eps):
        return ReflectionPair(-1.0, -1.0)
    p = y / (m * gamma)
    s = math.sqrt(eps - 1.0 + p * p)
    return ReflectionPair(-(s - p) / (s + p), (s - eps * p) / (s + eps * p))


# --------------------------------------------------------------------------- energy

# int_0^inf y ln(1 - e^{-2y}) dy
_ZERO_TERM = -zeta(3) / 4.0


def _term_integrals(lower, eps, cfg: LifshitzConfig, perfect: bool):
    """``sum_p int_{lower}^{...} y ln(1 - r_p^2 e^{-2y}) dy`` for a vector of lower limits.

    ``eps`` is the permittivity at each term's frequency; ``lower > 0``.
    """
    lower = np.asarray(lower, dtype=float)
    eps = np.asarray(eps, dtype=float)

    def integrand(t):
        y = lower + t
        ex = np.exp(-2.0 * y)
        if perfect:
            return 2.0 * y * np.log1p(-ex)
        rte, rtm = _reflection_sq(y / lower, eps)
        return y * (np.log1p(-rte * ex) + np.log1p(-rtm * ex))

    val, err = quad_vec(integrand, 0.0, cfg.y_upper, epsrel=cfg.quad_rel_tol, epsabs=0.0,
                        norm="max", limit=2000)
    return val, err


def matsubara_terms(x: float, mat: MaterialResponse, cfg: LifshitzConfig) -> np.ndarray:
    """Per-index contributions ``I_m`` (dimensionless, m = 0 at full weight)."""
    if not x > 0:
        raise ValueError("gap must be positive")
    if not cfg.T > 0:
        raise ValueError("Matsubara terms need T > 0")
    gamma = 2 * math.pi * CONSTANTS.k_B * cfg.T * x / (CONSTANTS.hbar * CONSTANTS.c)
    n_max = int(math.ceil(cfg.y_upper / gamma))
    if cfg.matsubara_cutoff is not None:
        n_max = min(n_max, int(cfg.matsubara_cutoff))
    perfect = isinstance(mat, PerfectConductor)
    terms = np.empty(n_max + 1)
    terms[0] = 2 * _ZERO_TERM if perfect else _ZERO_TERM
    if n_max >= 1:
        m = np.arange(1, n_max + 1, dtype=float)
        xi = 2 * math.pi * CONSTANTS.k_B * cfg.T * m / CONSTANTS.hbar
        eps = np.ones_like(m) if perfect else np.asarray(permittivity_imaginary_axis(mat, xi))
        terms[1:], _ = _term_integrals(m * gamma, eps, cfg, perfect)
    return terms


def _zero_temperature_energy(x: float, mat: MaterialResponse, cfg: LifshitzConfig) -> float:
    # kT sum'_m -> (hbar c / 2 pi x) int du with u = xi x / c
    perfect = isinstance(mat, PerfectConductor)

    def g(u):
        eps = np.ones(1) if perfect else np.atleast_1d(permittivity_imaginary_axis(mat, np.array([u * CONSTANTS.c / x])))
        val, _ = _term_integrals(np.array([u]), eps, cfg, perfect)
        return float(val[0])

    integral, _ = quad(g, 0.0, cfg.y_upper, epsrel=cfg.quad_rel_tol, limit=200)
    return CONSTANTS.hbar * CONSTANTS.c / (4 * math.pi**2 * x**3) * integral


def plane_plane_free_energy(x: float, mat: MaterialResponse, cfg: LifshitzConfig = LifshitzConfig()) -> float:
    """Casimir-Lifshitz free energy per unit area between two identical half-spaces (J/m^2)."""
    if not x > 0:
        raise ValueError("gap must be positive")
    if cfg.T == 0:
        return _zero_temperature_energy(x, mat, cfg)
    terms = matsubara_terms(x, mat, cfg)
    total = 0.5 * terms[0] + np.sum(terms[1:])
    if terms.size > 2 and cfg.matsubara_cutoff is not None:
        if abs(terms[-1]) > cfg.tail_tol * abs(total):
            raise LifshitzError(
                f"Matsubara sum truncated at m={terms.size - 1} with last term {terms[-1]:.3e} "
                f"(partial sum {total:.6e})"
            )
    return CONSTANTS.k_B * cfg.T / (2 * math.pi * x**2) * float(total)


def ideal_plane_plane_energy(x):
    """``-pi^2 hbar c / (720 x^3)``."""
    return -math.pi**2 * CONSTANTS.hbar * CONSTANTS.c / (720.0 * np.asarray(x, dtype=float) ** 3)


def _check_pfa(x, R):
    if np.any(np.asarray(x) / R > 1e-2):
        warnings.warn(f"x/R > 1e-2; proximity force approximation is questionable", PFAWarning, stacklevel=3)


def sphere_plane_force(x: float, g: Geometry, mat: MaterialResponse, cfg: LifshitzConfig = LifshitzConfig()) -> float:
    """PFA sphere-plane force ``2 pi R E_PP(x)`` (N, negative = attractive)."""
    _check_pfa(x, g.R)
    return 2 * math.pi * g.R * plane_plane_free_energy(x, mat, cfg)


def _energy_derivative(x, mat, cfg, rel_step=0.02):
    def d(h):
        return (plane_plane_free_energy(x + h, mat, cfg) - plane_plane_free_energy(x - h, mat, cfg)) / (2 * h)

    h = rel_step * x
    return (4.0 * d(h / 2) - d(h)) / 3.0


def sphere_plane_casimir_shift(
    x: float, g: Geometry, cant: Cantilever, mat: MaterialResponse, cfg: LifshitzConfig = LifshitzConfig()
) -> float:
    """Shift of the squared resonance frequency from the PFA Casimir force (Hz^2).

    ``-(1 / 4 pi^2 m_eff) d/dx [2 pi R E_PP] = -(R / 2 pi m_eff) dE_PP/dx``, with
    the derivative from a Richardson-extrapolated central difference.
    """
    if not x > 0:
        raise ValueError("gap must be positive")
    _check_pfa(x, g.R)
    return -g.R / (2 * math.pi * cant.m_eff) * _energy_derivative(x, mat, cfg)


def ideal_casimir_coefficient(R: float, m_eff: float) -> float:
    """``K_Cas = pi hbar c R / (480 m_eff)``: ideal shift is ``-K_Cas / x^4`` (Hz^2 m^4)."""
    if not (R > 0 and m_eff > 0):
        raise ValueError("R and m_eff must be positive")
    return math.pi * CONSTANTS.hbar * CONSTANTS.c * R / (480.0 * m_eff)


# --------------------------------------------------------------------------- optical data


def load_optical_table(path, drude: Drude = GOLD_DRUDE) -> TabulatedLoss:
    """Read a two-column table (photon energy in eV, eps'') with '#' comments."""
    path = Path(path)
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 columns, got {len(parts)}")
            try:
                rows.append((float(parts[0]), float(parts[1])))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric value") from None
    if not rows:
        raise ValueError(f"{path}: optical table is empty")
    arr = np.array(sorted(rows))
    return TabulatedLoss(tuple(ev_to_rad_s(arr[:, 0])), tuple(arr[:, 1]), drude)


def bundled_gold_table() -> TabulatedLoss:
    """Small synthetic gold-like loss table shipped with the package (not measured data)."""
    return load_optical_table(Path(__file__).parent / "data" / "gold_synthetic.txt", GOLD_DRUDE)
