from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .lsq import FitError, FitResult
from .models import DEFAULT_KEL_REL_ERROR, PowerLawModel, fit_power_law

__all__ = [
    "ScanStep",
    "StabilityScan",
    "stability_scan",
    "DisplacementSensitivity",
    "displacement_sensitivity",
    "DetrendResult",
    "detrend_moving_average",
]

_MIN_POINTS = {"fixed": 4, "free": 5}


def _sorted_by_distance(V_pzt, K_el, sigma):
    V = np.asarray(V_pzt, dtype=float)
    K = np.asarray(K_el, dtype=float)
    s = DEFAULT_KEL_REL_ERROR * K if sigma is None else np.broadcast_to(np.asarray(sigma, float), K.shape)
    order = np.argsort(V, kind="stable")  # small V_pzt = large gap
    return V[order], K[order], np.array(s[order])


@dataclass
class ScanStep:
    n_points: int
    model: PowerLawModel | None
    fit: FitResult | None
    error: str | None = None


@dataclass
class StabilityScan:
    mode: str
    steps: list[ScanStep] = field(default_factory=list)

    def trajectory(self, name: str) -> np.ndarray:
        """Per-step value of ``alpha``, ``V0_pzt``, ``e`` or ``x0``; NaN where the step failed."""
        out = []
        for st in self.steps:
            if st.model is None:
                out.append(np.nan)
            else:
                out.append(getattr(st.model, name))
        return np.array(out)

    @property
    def n_points(self) -> np.ndarray:
        return np.array([st.n_points for st in self.steps])

    def closest_distance(self) -> np.ndarray:
        return self.trajectory("x0")

    def to_rows(self) -> list[dict]:
        rows = []
        for st in self.steps:
            row = {"n_points": st.n_points, "error": st.error}
            if st.model is not None:
                row.update(alpha=st.model.alpha, V0_pzt=st.model.V0_pzt, e=st.model.e, x0=st.model.x0,
                           chi2_red=st.fit.chi2_red)
            rows.append(row)
        return rows


def stability_scan(V_pzt, K_el, sigma=None, *, mode="fixed", beta=87e-9, n_start=None) -> StabilityScan:
    """Refit the power law on growing subsets, farthest points first.

    Step ``i`` uses the ``n_start + i`` largest gaps. Failed steps are recorded
    and the scan continues. Every step reports ``x0`` at the closest approach
    of the full data set, so the trajectory tracks the asymptote alone.
    """
    V, K, s = _sorted_by_distance(V_pzt, K_el, sigma)
    n_min = _MIN_POINTS[mode]
    n_start = n_min if n_start is None else max(n_start, n_min)
    if V.size < n_start:
        raise FitError(f"need at least {n_start} points for a {mode} stability scan")
    scan = StabilityScan(mode)
    for n in range(n_start, V.size + 1):
        try:
            m, fr = fit_power_law(V[:n], K[:n], s[:n], mode=mode, beta=beta)
            scan.steps.append(ScanStep(n, replace(m, V_pzt_max=float(V[-1])), fr))
        except FitError as exc:
            scan.steps.append(ScanStep(n, None, None, str(exc)))
    return scan


@dataclass
class DisplacementSensitivity:
    delta_x: float
    forward: tuple[PowerLawModel, FitResult]
    nominal: tuple[PowerLawModel, FitResult]
    backward: tuple[PowerLawModel, FitResult]

    def relative_change(self, name: str) -> tuple[float, float]:
        """(forward, backward) relative change of a model attribute against nominal."""
        ref = getattr(self.nominal[0], name)
        return tuple((getattr(m, name) - ref) / ref for m, _ in (self.forward, self.backward))

    def change(self, name: str) -> tuple[float, float]:
        ref = getattr(self.nominal[0], name)
        return tuple(getattr(m, name) - ref for m, _ in (self.forward, self.backward))


def displacement_sensitivity(V_pzt, K_el, sigma=None, *, delta_x=8e-9, beta=87e-9, mode="free"):
    """Refit after moving only the closest-approach point by ``delta_x``.

    Forward means the point is taken ``delta_x`` closer to the surface, i.e.
    its PZT voltage is raised by ``delta_x / beta``.
    """
    V, K, s = _sorted_by_distance(V_pzt, K_el, sigma)
    dv = delta_x / beta
    out = {}
    for tag, shift in (("forward", dv), ("nominal", 0.0), ("backward", -dv)):
        Vs = V.copy()
        Vs[-1] += shift
        out[tag] = fit_power_law(Vs, K, s, mode=mode, beta=beta)
    return DisplacementSensitivity(delta_x, out["forward"], out["nominal"], out["backward"])


@dataclass
class DetrendResult:
    t: np.ndarray
    residual: np.ndarray
    trend: np.ndarray
    relative_error: float
    window: int


def detrend_moving_average(t, K_el, window: int = 4, *, bias_correct: bool = False) -> DetrendResult:
    """Subtract a moving average and report the relative scatter of what is left.

    Only points whose window lies fully inside the series are kept. The window
    contains the point itself, so the raw scatter underestimates white noise by
    ``sqrt(1 - 1/window)``; ``bias_correct`` undoes that factor.
    """
    t = np.asarray(t, dtype=float)
    K = np.asarray(K_el, dtype=float)
    if window < 2:
        raise ValueError("window must be at least 2")
    if K.size <= window:
        raise ValueError(f"series of length {K.size} too short for window {window}")
    kernel = np.ones(window) / window
    trend = np.convolve(K, kernel, mode="valid")
    lo = window // 2
    idx = np.arange(lo, lo + trend.size)
    resid = K[idx] - trend
    rel = float(np.std(resid / trend, ddof=1))
    if bias_correct:
        rel /= np.sqrt(1.0 - 1.0 / window)
    return DetrendResult(t[idx], resid, trend, rel, window)
