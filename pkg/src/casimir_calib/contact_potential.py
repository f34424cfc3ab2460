"""Contact potential from the measured minimizing potential.

With the PFA capacitance the vertex condition becomes a linear second-order
ODE for the contact potential,

    x^2 ln(R/x) Vc'' - 2 x Vc' + Vc = V0(x),

integrated here from the largest gap ``x_n`` down toward contact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .core import Geometry
from .electrostatics import ContactPotentialModel, Exponential, Logarithmic, residual_frequency_sq
from .fitting.lsq import FitError, FitResult, levenberg_marquardt, linear_lstsq

__all__ = [
    "V0Fit",
    "exponential_residuals",
    "fit_v0_model",
    "BoundaryCondition",
    "OdeSolution",
    "OdeError",
    "solve_vc_ode",
    "largest_gap_boundary_condition",
    "ode_residual",
    "bias_independent_residual",
    "xn_sensitivity",
]


class OdeError(RuntimeError):
    """Integration failed or the interval reaches a singular coefficient."""


# --------------------------------------------------------------------------- V0(x) fits


@dataclass
class V0Fit:
    form: str
    model: ContactPotentialModel
    fit: FitResult
    note: str = ""

    def to_dict(self):
        return {"form": self.form, "model": self.model.to_dict(), "fit": self.fit.to_dict(), "note": self.note}


def exponential_residuals(x, v, s):
    """Weighted residual and Jacobian callables for ``(V0, dV, lam)``."""
    s = np.broadcast_to(np.asarray(s, dtype=float), np.shape(v))

    def res(p):
        return (p[0] + p[1] * (1.0 - np.exp(-x / p[2])) - v) / s

    def jac(p):
        e = np.exp(-x / p[2])
        return np.column_stack([np.ones_like(x), 1.0 - e, -p[1] * x / p[2] ** 2 * e]) / s[:, None]

    return res, jac


def _fit_exponential(x, v, s):
    def linear(lam):
        A = np.column_stack([np.ones_like(x), 1.0 - np.exp(-x / lam)])
        return linear_lstsq(A, v, s, ("V0", "dV"))

    lams = np.geomspace(0.05 * x.min(), 20 * x.max(), 400)
    chis = []
    for lam in lams:
        try:
            chis.append(linear(lam).chi2)
        except FitError:
            chis.append(np.inf)
    lam0 = lams[int(np.argmin(chis))]
    v00, dv0 = linear(lam0).values

    res, jac = exponential_residuals(x, v, s)
    vscale = max(abs(v00), abs(dv0), float(np.ptp(v)), 1e-6)
    fr = levenberg_marquardt(res, jac, [v00, dv0, lam0], ("V0", "dV", "lam"),
                             scale=[vscale, vscale, lam0], feasible=lambda p: p[2] > 0,
                             units={"V0": "V", "dV": "V", "lam": "m"})
    if not fr.converged:
        raise FitError("exponential V0 fit did not converge", fr.trace)
    return V0Fit("exponential", Exponential(*map(float, fr.values)), fr)


def _fit_logarithmic(x, v, s, Lam=None, Vlog=None):
    if np.any(x <= 0):
        raise FitError("logarithmic form needs strictly positive distances")
    if Lam is not None and Vlog is not None:
        raise ValueError("give at most one of Lam and Vlog; the other is fixed by the fit")
    note = ("offset and length scale are degenerate: only Vlog - dVlog ln(Lam) is identifiable, "
            "one of them is held fixed")
    if Vlog is None:
        Lam = float(np.exp(np.mean(np.log(x)))) if Lam is None else float(Lam)
        A = np.column_stack([np.ones_like(x), np.log(x / Lam)])
        lin = linear_lstsq(A, v, s, ("Vlog", "dVlog"), {"Vlog": "V", "dVlog": "V"})
        return V0Fit("logarithmic", Logarithmic(float(lin.values[0]), float(lin.values[1]), Lam), lin,
                     note + f" (Lam = {Lam:.6g} m)")
    # Vlog held: solve for dVlog and Lam
    xr = float(np.exp(np.mean(np.log(x))))
    A = np.column_stack([np.ones_like(x), np.log(x / xr)])
    lin = linear_lstsq(A, v, s, ("a", "dVlog"))
    a, d = lin.values
    lnL = math.log(xr) + (Vlog - a) / d if abs(d) > 1e-12 * max(abs(a), abs(Vlog), 1e-300) else math.inf
    if not -700 < lnL < 700:
        raise FitError("flat V0 data: logarithmic length scale undefined")
    # rows: d(dVlog), d(Lam) with respect to (a, d)
    J = np.array([[0.0, 1.0], [-1.0 / d, -(Vlog - a) / d**2]])
    J[1] *= math.exp(lnL)
    cov = J @ lin.covariance @ J.T
    fr = FitResult(("dVlog", "Lam"), np.array([d, math.exp(lnL)]), cov, lin.chi2, lin.dof,
                   units={"dVlog": "V", "Lam": "m"})
    return V0Fit("logarithmic", Logarithmic(float(Vlog), float(d), math.exp(lnL)), fr,
                 note + f" (Vlog = {Vlog:.6g} V)")


def fit_v0_model(x, V0, sigma, form: str = "exponential", *, Lam=None, Vlog=None) -> V0Fit:
    """Weighted fit of the minimizing potential versus gap.

    ``form`` is ``"exponential"`` (``V0 + dV (1 - exp(-x/lam))``) or
    ``"logarithmic"`` (``Vlog + dVlog ln(x/Lam)``). The logarithmic form has
    only two identifiable combinations; ``Lam`` (default: geometric mean of
    ``x``) or ``Vlog`` must be held fixed.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(V0, dtype=float)
    s = np.broadcast_to(np.asarray(sigma, dtype=float), x.shape).astype(float)
    if x.size < 4:
        raise FitError(f"V0 model fit needs at least 4 points, got {x.size}")
    if np.any(s <= 0):
        raise FitError("sigma must be positive")
    if form == "exponential":
        return _fit_exponential(x, v, s)
    if form == "logarithmic":
        return _fit_logarithmic(x, v, s, Lam, Vlog)
    raise ValueError(f"unknown V0 form {form!r}")


# --------------------------------------------------------------------------- ODE


@dataclass(frozen=True)
class BoundaryCondition:
    x_n: float
    Vc_at_xn: float
    Vc1_at_xn: float = 0.0


def largest_gap_boundary_condition(v0: ContactPotentialModel, x_n: float) -> BoundaryCondition:
    """``Vc(x_n) = V0(x_n)``, ``Vc'(x_n) = 0`` at the largest measured gap."""
    return BoundaryCondition(float(x_n), float(v0(x_n)), 0.0)


def _rhs_factory(v0, R):
    def rhs(x, y):
        vc, vc1 = y
        return [vc1, (v0(x) - vc + 2.0 * x * vc1) / (x * x * math.log(R / x))]

    return rhs


@dataclass
class OdeSolution:
    """Contact potential on ``[x_min, x_n]``.

    Usable wherever a contact-potential model is expected: :meth:`derivatives`
    returns ``(Vc, Vc', Vc'')`` with ``Vc''`` taken from the ODE itself.
    """

    x_grid: np.ndarray
    Vc: np.ndarray
    Vc1: np.ndarray
    v0: ContactPotentialModel
    R: float
    bc: BoundaryCondition
    rtol: float
    atol: float
    error_estimate: float = math.nan
    n_steps: int = 0
    _dense: object = field(default=None, repr=False)

    @property
    def x_min(self) -> float:
        return float(self.x_grid[-1])

    @property
    def x_n(self) -> float:
        return float(self.x_grid[0])

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.x_min, self.x_n
        tol = 1e-12 * hi
        if np.any(x < lo - tol) or np.any(x > hi + tol):
            raise ValueError(f"x outside the integrated interval [{lo:g}, {hi:g}]")
        return np.clip(x, lo, hi)

    def state(self, x):
        x = self._check(x)
        y = self._dense(x)
        return y[0], y[1]

    def derivatives(self, x):
        x = self._check(x)
        vc, vc1 = self.state(x)
        vc2 = (np.asarray(self.v0(x)) - vc + 2.0 * x * vc1) / (x * x * np.log(self.R / x))
        return vc, vc1, vc2

    def __call__(self, x):
        return self.state(x)[0]

    def to_dict(self):
        return {
            "x": self.x_grid.tolist(),
            "Vc": self.Vc.tolist(),
            "Vc1": self.Vc1.tolist(),
            "x_n": self.x_n,
            "x_min": self.x_min,
            "bc": {"x_n": self.bc.x_n, "Vc": self.bc.Vc_at_xn, "Vc1": self.bc.Vc1_at_xn},
            "rtol": self.rtol,
            "atol": self.atol,
            "error_estimate": self.error_estimate,
            "n_steps": self.n_steps,
        }


def _integrate(v0, R, bc, x_min, rtol, atol, method):
    rhs = _rhs_factory(v0, R)
    # Vc' is of order V / x: scale its absolute tolerance accordingly
    atol_vec = [atol, atol / x_min]
    sol = solve_ivp(rhs, (bc.x_n, x_min), [bc.Vc_at_xn, bc.Vc1_at_xn], method=method, rtol=rtol,
                    atol=atol_vec, dense_output=True)
    if not sol.success:
        raise OdeError(f"integration failed at x={sol.t[-1]:.4g} m: {sol.message}")
    return sol


def solve_vc_ode(
    v0: ContactPotentialModel,
    R: float,
    bc: BoundaryCondition,
    x_min: float,
    *,
    rtol: float = 1e-10,
    atol: float = 1e-9,
    method: str = "RK45",
    n_grid: Optional[int] = None,
    estimate_error: bool = True,
) -> OdeSolution:
    """Integrate the contact-potential ODE from ``bc.x_n`` down to ``x_min``.

    Embedded Runge-Kutta 5(4) with dense output. ``error_estimate`` is the
    change of ``Vc(x_min)`` when both tolerances are tightened tenfold.
    ``n_grid`` resamples the dense solution on a log-spaced grid; by default
    the accepted steps are returned.
    """
    if not 0 < x_min < bc.x_n:
        raise ValueError("need 0 < x_min < x_n")
    if bc.x_n >= R:
        raise ValueError("x_n must be below the sphere radius")
    if math.log(R / bc.x_n) < 0.05:
        raise OdeError("x_n too close to R: the coefficient x^2 ln(R/x) nearly vanishes")
    sol = _integrate(v0, R, bc, x_min, rtol, atol, method)
    err = math.nan
    if estimate_error:
        fine = _integrate(v0, R, bc, x_min, rtol / 10, atol / 10, method)
        err = abs(float(fine.y[0, -1] - sol.y[0, -1]))
    if n_grid:
        xg = np.geomspace(bc.x_n, x_min, n_grid)
        y = sol.sol(xg)
    else:
        xg, y = sol.t, sol.y
    return OdeSolution(np.asarray(xg), y[0].copy(), y[1].copy(), v0, R, bc, rtol, atol, err,
                       len(sol.t) - 1, sol.sol)


def ode_residual(sol: OdeSolution, x, vc2=None):
    """``x^2 ln(R/x) Vc'' - 2x Vc' + Vc - V0(x)`` on the dense solution.

    ``vc2`` may be supplied from an independent route (e.g. differencing);
    otherwise the ODE's own second derivative is used.
    """
    vc, vc1, own = sol.derivatives(x)
    vc2 = own if vc2 is None else vc2
    x = np.asarray(x, dtype=float)
    return x * x * np.log(sol.R / x) * vc2 - 2 * x * vc1 + vc - sol.v0(x)


def bias_independent_residual(x, sol: OdeSolution, g: Geometry, m_eff: float):
    """Electrostatic shift that survives at the parabola vertex (Hz^2)."""
    return residual_frequency_sq(x, sol, g, m_eff)


def xn_sensitivity(v0: ContactPotentialModel, R: float, x_n: float, x_min: float, rel: float = 0.2, **kw) -> dict:
    """``Vc(x_min)`` for boundary placements ``x_n (1 - rel)``, ``x_n``, ``x_n (1 + rel)``."""
    out = {}
    for tag, f in (("minus", 1 - rel), ("nominal", 1.0), ("plus", 1 + rel)):
        xn = x_n * f
        s = solve_vc_ode(v0, R, largest_gap_boundary_condition(v0, xn), x_min, estimate_error=False, **kw)
        out[tag] = {"x_n": xn, "Vc_at_x_min": float(s.Vc[-1])}
    out["spread"] = out["plus"]["Vc_at_x_min"] - out["minus"]["Vc_at_x_min"]
    return out
