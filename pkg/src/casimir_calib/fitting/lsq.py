"""Weighted least squares: a small damped Gauss-Newton (Levenberg-Marquardt) loop
and a linear solver, both returning :class:`FitResult`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = ["FitResult", "FitError", "levenberg_marquardt", "linear_lstsq", "check_jacobian"]


class FitError(RuntimeError):
    """Fit could not be carried out (rank deficiency, divergence, bound hit)."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


@dataclass
class FitResult:
    names: tuple
    values: np.ndarray
    covariance: np.ndarray
    chi2: float
    dof: int
    converged: bool = True
    n_iter: int = 0
    units: dict = field(default_factory=dict)
    trace: list = field(default_factory=list, repr=False)

    @property
    def params(self) -> dict:
        return dict(zip(self.names, map(float, self.values)))

    @property
    def errors(self) -> dict:
        return dict(zip(self.names, map(float, np.sqrt(np.clip(np.diag(self.covariance), 0, None)))))

    @property
    def chi2_red(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else math.nan

    def __getitem__(self, name):
        return self.params[name]

    def to_dict(self) -> dict:
        return {
            "params": self.params,
            "errors": self.errors,
            "covariance": self.covariance.tolist(),
            "units": dict(self.units),
            "chi2": float(self.chi2),
            "dof": int(self.dof),
            "chi2_red": float(self.chi2_red),
            "converged": bool(self.converged),
            "n_iter": int(self.n_iter),
        }


def _covariance(J):
    JtJ = J.T @ J
    try:
        return np.linalg.inv(JtJ)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(JtJ)


def linear_lstsq(A, y, sigma, names: Sequence[str], units=None) -> FitResult:
    """Weighted linear least squares ``y ~ A @ p``."""
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), y.shape)
    if np.any(sigma <= 0):
        raise FitError("uncertainties must be positive")
    n, k = A.shape
    Aw = A / sigma[:, None]
    yw = y / sigma
    if np.linalg.matrix_rank(Aw) < k:
        raise FitError(f"design matrix is rank deficient ({n} points, {k} parameters)")
    # QR keeps the monomial bases reasonably conditioned
    Q, Rm = np.linalg.qr(Aw)
    p = np.linalg.solve(Rm, Q.T @ yw)
    Rinv = np.linalg.inv(Rm)
    cov = Rinv @ Rinv.T
    r = yw - Aw @ p
    return FitResult(tuple(names), p, cov, float(r @ r), n - k, True, 1, dict(units or {}))


def levenberg_marquardt(
    residuals: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    p0,
    names: Sequence[str],
    *,
    scale=None,
    feasible: Optional[Callable[[np.ndarray], bool]] = None,
    max_iter: int = 200,
    xtol: float = 1e-10,
    lam0: float = 1e-3,
    units=None,
) -> FitResult:
    """Minimize ``sum(residuals(p)**2)``.

    ``residuals`` must already be divided by the per-point uncertainties and
    ``jacobian`` return d(residuals)/dp. Parameters are internally divided by
    ``scale`` (default ``|p0|``, or 1 where p0 is zero). Trial steps for which
    ``feasible`` is false are rejected like uphill steps. The damping factor
    is halved after an accepted step and doubled after a rejected one.
    """
    p = np.array(p0, dtype=float)
    if scale is None:
        scale = np.where(p != 0, np.abs(p), 1.0)
    scale = np.asarray(scale, dtype=float)
    if feasible is not None and not feasible(p):
        raise FitError("initial parameters are infeasible")

    r = residuals(p)
    n = r.size
    k = p.size
    if n <= k:
        raise FitError(f"need more points than parameters ({n} <= {k})")
    chi2 = float(r @ r)
    lam = lam0
    trace = [(0, chi2, lam, p.copy())]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = jacobian(p) * scale  # d r / d q
        g = J.T @ r
        H = J.T @ J
        d = np.diag(H).copy()
        d[d == 0] = 1.0
        accepted = False
        while lam < 1e20:
            try:
                dq = -np.linalg.solve(H + lam * np.diag(d), g)
            except np.linalg.LinAlgError:
                lam *= 2.0
                continue
            p_new = p + dq * scale
            if feasible is not None and not feasible(p_new):
                lam *= 2.0
                continue
            r_new = residuals(p_new)
            chi2_new = float(r_new @ r_new)
            if np.isfinite(chi2_new) and chi2_new <= chi2:
                accepted = True
                break
            lam *= 2.0
        if not accepted:
            # no downhill step exists at any damping: at a minimum to working precision
            converged = True
            break
        step = np.max(np.abs(dq) / np.maximum(np.abs(p_new / scale), 1.0))
        p, r, chi2 = p_new, r_new, chi2_new
        lam = max(lam * 0.5, 1e-15)
        trace.append((it, chi2, lam, p.copy()))
        if step < xtol:
            converged = True
            break

    cov = _covariance(jacobian(p))
    return FitResult(tuple(names), p, cov, chi2, n - k, converged, it, dict(units or {}), trace)


def check_jacobian(residuals, jacobian, p, rel_step=1e-6):
    """Max relative deviation between ``jacobian(p)`` and central differences."""
    p = np.asarray(p, dtype=float)
    J = jacobian(p)
    Jn = np.empty_like(J)
    for i in range(p.size):
        h = rel_step * max(abs(p[i]), 1e-12)
        e = np.zeros_like(p)
        e[i] = h
        Jn[:, i] = (residuals(p + e) - residuals(p - e)) / (2 * h)
    denom = np.maximum(np.abs(Jn), np.max(np.abs(Jn), axis=0) * 1e-8)
    return float(np.max(np.abs(J - Jn) / denom))
