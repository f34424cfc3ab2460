"""Forward simulation of a calibration run: bias sweeps at a series of PZT
voltages, unbiased reference readings, and a capacitance scan.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Union

import numpy as np
from scipy.interpolate import CubicSpline

from .. import __version__
from ..contact_potential import OdeSolution, largest_gap_boundary_condition, solve_vc_ode
from ..core import Cantilever, Geometry, pfa_capacitance
from ..electrostatics import (
    ContactPotentialModel,
    Exponential,
    electrostatic_curvature,
    minimizing_potential,
    model_from_dict,
    residual_frequency_sq,
)
from ..lifshitz import (
    LifshitzConfig,
    MaterialResponse,
    PerfectConductor,
    ideal_casimir_coefficient,
    material_from_dict,
    sphere_plane_casimir_shift,
)

__all__ = [
    "SimulationConfig",
    "RunDataset",
    "FrequencySample",
    "simulate_run",
    "config_hash",
    "baseline_config",
]

REFERENCE = "ref"
BIASED = "freq"
CAPACITANCE = "cap"


@dataclass
class SimulationConfig:
    """Everything that defines a synthetic run. ``seed`` fixes the whole dataset.

    ``vc_model`` describes the minimizing potential V0(x) when ``vc_role`` is
    ``"minimizing"`` (the contact potential is then obtained from the ODE with
    the boundary condition at the largest gap), or the contact potential
    itself when ``vc_role`` is ``"contact"``.

    ``material`` is ``"ideal"`` (analytic perfect-mirror T = 0 shift) or a
    material response evaluated with the Lifshitz sum at ``lifshitz.T``.

    ``anomaly_exponent`` replaces the inverse-square law of the curvature by
    ``K_el(x) = K_coulomb(x_ref) (x / x_ref)^e``; purely phenomenological.
    """

    geometry: Geometry = field(default_factory=Geometry)
    cantilever: Cantilever = field(default_factory=Cantilever)
    vc_model: ContactPotentialModel = field(default_factory=lambda: Exponential(0.011, 0.25, 703e-9))
    vc_role: str = "minimizing"
    material: Union[str, MaterialResponse] = "ideal"
    lifshitz: LifshitzConfig = field(default_factory=LifshitzConfig)
    include_casimir: bool = True
    V_pzt: Optional[tuple] = None
    distances: tuple = tuple(np.geomspace(60e-9, 3e-6, 12))
    beta: float = 87e-9
    V0_pzt: float = 69.31
    n_bias: int = 9
    target_shift_hz: float = 1.0
    references: bool = True
    noise_freq_hz: float = 0.0
    noise_kel_rel: float = 0.0
    drift_amplitude_m: float = 0.0
    drift_timescale_s: float = 12 * 3600.0
    nu_drift_hz: float = 0.0
    anomaly_exponent: Optional[float] = None
    anomaly_ref_x: float = 100e-9
    dt_s: float = 60.0
    C_stray: float = 160e-12
    noise_C: float = 0.0
    n_capacitance: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.vc_role not in ("minimizing", "contact"):
            raise ValueError("vc_role must be 'minimizing' or 'contact'")
        if isinstance(self.material, str) and self.material != "ideal":
            raise ValueError("material must be 'ideal' or a material response")
        for name in ("noise_freq_hz", "noise_kel_rel", "drift_amplitude_m", "nu_drift_hz", "noise_C"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.n_bias < 3:
            raise ValueError("need at least 3 bias points per distance")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.drift_timescale_s > 0 or not self.dt_s > 0:
            raise ValueError("time scales must be positive")
        x = self.gaps()
        if x.size == 0:
            raise ValueError("distance grid is empty")
        if np.any(x <= 0) or np.any(x >= self.geometry.R):
            raise ValueError("every gap must lie in (0, R)")
        if self.drift_amplitude_m >= x.min():
            raise ValueError("drift amplitude exceeds the smallest gap")

    def pzt_voltages(self) -> np.ndarray:
        if self.V_pzt is not None:
            return np.asarray(self.V_pzt, dtype=float)
        return self.V0_pzt - np.asarray(self.distances, dtype=float) / self.beta

    def gaps(self) -> np.ndarray:
        return self.beta * (self.V0_pzt - self.pzt_voltages())

    def to_dict(self) -> dict:
        d = {}
        for k, v in asdict(self).items():
            if isinstance(v, tuple):
                v = [float(a) for a in v]
            d[k] = v
        d["vc_model"] = self.vc_model.to_dict()
        d["material"] = self.material if isinstance(self.material, str) else self.material.to_dict()
        d["lifshitz"] = self.lifshitz.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        d = dict(d)
        if "geometry" in d:
            d["geometry"] = Geometry(**d["geometry"])
        if "cantilever" in d:
            d["cantilever"] = Cantilever(**d["cantilever"])
        if "vc_model" in d:
            d["vc_model"] = model_from_dict(d["vc_model"])
        if "material" in d and not isinstance(d["material"], str):
            d["material"] = material_from_dict(d["material"])
        if "lifshitz" in d:
            d["lifshitz"] = LifshitzConfig(**d["lifshitz"])
        for k in ("V_pzt", "distances"):
            if d.get(k) is not None:
                d[k] = tuple(float(a) for a in d[k])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown simulation config keys: {sorted(unknown)}")
        return cls(**d)


def config_hash(cfg) -> str:
    d = cfg.to_dict() if hasattr(cfg, "to_dict") else cfg
    blob = json.dumps(d, sort_keys=True, default=float).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def baseline_config(**overrides) -> SimulationConfig:
    """Baseline synthetic run: R = 30.9 mm, m_eff = 0.46 g, exponential minimizing potential."""
    return replace(SimulationConfig(), **overrides)


@dataclass(frozen=True)
class FrequencySample:
    V_pzt: float
    V_bias: Optional[float]
    nu_m: float
    t: float


@dataclass
class RunDataset:
    """Raw run records. Reference readings have ``V_bias = NaN`` and record ``"ref"``."""

    record: np.ndarray
    V_pzt: np.ndarray
    V_bias: np.ndarray
    nu_m: np.ndarray
    t: np.ndarray
    cap_V_pzt: np.ndarray = field(default_factory=lambda: np.empty(0))
    cap_C: np.ndarray = field(default_factory=lambda: np.empty(0))
    x: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    @property
    def samples(self) -> list[FrequencySample]:
        return [
            FrequencySample(float(v), None if np.isnan(b) else float(b), float(n), float(t))
            for v, b, n, t in zip(self.V_pzt, self.V_bias, self.nu_m, self.t)
        ]

    @property
    def capacitance_samples(self) -> list[tuple[float, float]]:
        return list(zip(map(float, self.cap_V_pzt), map(float, self.cap_C)))

    def __len__(self):
        return self.V_pzt.size

    def __eq__(self, other):
        if not isinstance(other, RunDataset):
            return NotImplemented
        arrays = ("record", "V_pzt", "V_bias", "nu_m", "t", "cap_V_pzt", "cap_C")
        same = all(np.array_equal(getattr(self, a), getattr(other, a), equal_nan=a != "record") for a in arrays)
        if (self.x is None) != (other.x is None):
            return False
        if self.x is not None:
            same = same and np.array_equal(self.x, other.x, equal_nan=True)
        return same and self.metadata == other.metadata


class _ContactPotential:
    """Contact potential used by the simulator, plus the minimizing potential it implies."""

    def __init__(self, cfg: SimulationConfig, x_lo: float, x_hi: float):
        g = cfg.geometry
        if cfg.vc_role == "contact":
            self.vc = cfg.vc_model
            self.sol = None
        else:
            x_n = float(cfg.gaps().max())
            self.sol = solve_vc_ode(cfg.vc_model, g.R, largest_gap_boundary_condition(cfg.vc_model, x_n),
                                    min(x_lo, 0.999 * cfg.gaps().min()), estimate_error=False)
            self.vc = self.sol
        self.g = g

    def _clip(self, x):
        # the ODE solution only exists below the boundary gap; drift beyond it reuses the edge
        if self.sol is None:
            return x
        return np.clip(x, self.sol.x_min, self.sol.x_n)

    def V0(self, x):
        return minimizing_potential(self._clip(x), self.vc, self.g)

    def residual(self, x, m_eff):
        return residual_frequency_sq(self._clip(x), self.vc, self.g, m_eff)


def _casimir_shift_fn(cfg: SimulationConfig, x_lo: float, x_hi: float):
    g, cant = cfg.geometry, cfg.cantilever
    if not cfg.include_casimir:
        return lambda x: np.zeros_like(np.asarray(x, dtype=float))
    if cfg.material == "ideal":
        K = ideal_casimir_coefficient(g.R, cant.m_eff)
        return lambda x: -K / np.asarray(x, dtype=float) ** 4
    # tabulate once on a log grid and interpolate in log-log space
    xs = np.geomspace(0.98 * x_lo, 1.02 * x_hi, 40)
    vals = np.array([sphere_plane_casimir_shift(float(x), g, cant, cfg.material, cfg.lifshitz) for x in xs])
    spl = CubicSpline(np.log(xs), np.log(-vals))
    return lambda x: -np.exp(spl(np.log(np.asarray(x, dtype=float))))


def simulate_run(cfg: SimulationConfig) -> RunDataset:
    """Generate one synthetic run; identical configs give identical datasets."""
    rng = np.random.default_rng(cfg.seed)
    g, cant = cfg.geometry, cfg.cantilever
    m = cant.m_eff
    V_pzt = cfg.pzt_voltages()
    order = np.argsort(V_pzt, kind="stable")  # approach: farthest first
    V_pzt = V_pzt[order]
    gaps = cfg.gaps()[order]
    A = cfg.drift_amplitude_m
    x_lo, x_hi = gaps.min() - A, gaps.max() + A
    cp = _ContactPotential(cfg, x_lo, x_hi)
    cas = _casimir_shift_fn(cfg, x_lo, x_hi)
    nu_p_sq = cant.nu_p**2
    omega_d = 2 * math.pi / cfg.drift_timescale_s

    def curvature(x):
        if cfg.anomaly_exponent is None:
            return electrostatic_curvature(x, g.R, m)
        k_ref = electrostatic_curvature(cfg.anomaly_ref_x, g.R, m)
        return k_ref * (np.asarray(x) / cfg.anomaly_ref_x) ** cfg.anomaly_exponent

    def nu_measured(x_nom, V, t, kel_factor):
        x = x_nom + A * math.sin(omega_d * t)
        nu_sq = nu_p_sq + 2 * cant.nu_p * cfg.nu_drift_hz * math.sin(omega_d * t + 1.0)
        nu_sq += float(cas(x)) + float(cp.residual(x, m))
        if V is not None:
            nu_sq -= kel_factor * float(curvature(x)) * (V - float(cp.V0(x))) ** 2
        return math.sqrt(nu_sq) + cfg.noise_freq_hz * rng.standard_normal()

    rec, vp, vb, nu, tt = [], [], [], [], []
    t = 0.0

    def emit(kind, v_pzt, v_bias, value):
        nonlocal t
        rec.append(kind)
        vp.append(v_pzt)
        vb.append(np.nan if v_bias is None else v_bias)
        nu.append(value)
        tt.append(t)
        t += cfg.dt_s

    shift_sq = 2 * cant.nu_p * cfg.target_shift_hz
    for v_pzt, x in zip(V_pzt, gaps):
        kel_factor = 1.0 + cfg.noise_kel_rel * rng.standard_normal()
        half_span = math.sqrt(shift_sq / float(curvature(x)))
        center = float(cp.V0(x))
        biases = center + np.linspace(-half_span, half_span, cfg.n_bias)
        if cfg.references:
            emit(REFERENCE, v_pzt, None, nu_measured(x, 0.0, t, kel_factor))
        for V in biases:
            emit(BIASED, v_pzt, float(V), nu_measured(x, float(V), t, kel_factor))
            if cfg.references:
                emit(REFERENCE, v_pzt, None, nu_measured(x, 0.0, t, kel_factor))

    # capacitance scan over the same approach range
    cap_v = np.linspace(V_pzt.min(), V_pzt.max(), cfg.n_capacitance) if cfg.n_capacitance else np.empty(0)
    cap_x = cfg.beta * (cfg.V0_pzt - cap_v)
    cap_c = np.array([cfg.C_stray + pfa_capacitance(float(x), g.R)[0] for x in cap_x])
    if cfg.noise_C > 0 and cap_c.size:
        cap_c = cap_c + cfg.noise_C * rng.standard_normal(cap_c.size)

    meta = {
        "format_version": 1,
        "tool_version": __version__,
        "config_hash": config_hash(cfg),
        "seed": int(cfg.seed),
        "synthetic": True,
        "beta": float(cfg.beta),
        "R": float(g.R),
        "temperature": float(cfg.lifshitz.T),
        "noise_freq_hz": float(cfg.noise_freq_hz),
        "noise_C": float(cfg.noise_C),
    }
    return RunDataset(
        np.array(rec),
        np.array(vp, dtype=float),
        np.array(vb, dtype=float),
        np.array(nu, dtype=float),
        np.array(tt, dtype=float),
        cap_v.astype(float),
        cap_c.astype(float),
        None,
        meta,
    )
