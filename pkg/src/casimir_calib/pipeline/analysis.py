"""End-to-end analysis of a run: calibration parabolas, curvature power law,
distance inference, contact-potential chain, residuals and Casimir fit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .. import __version__
from ..contact_potential import (
    OdeError,
    fit_v0_model,
    largest_gap_boundary_condition,
    solve_vc_ode,
    xn_sensitivity,
)
from ..core import Cantilever, Geometry
from ..electrostatics import VoltageParabola, residual_frequency_sq
from ..fitting import (
    DEFAULT_KEL_REL_ERROR,
    FitError,
    FitResult,
    PowerLawModel,
    displacement_sensitivity,
    fit_capacitance,
    fit_parabola,
    fit_power_law,
    linear_lstsq,
    stability_scan,
)
from ..lifshitz import (
    GOLD_DRUDE,
    LifshitzConfig,
    LifshitzError,
    MaterialResponse,
    PFAWarning,
    material_from_dict,
    sphere_plane_casimir_shift,
)
from .simulate import BIASED, CAPACITANCE, REFERENCE, RunDataset

__all__ = [
    "CalibrationPoint",
    "Calibration",
    "AnalysisOptions",
    "AnalysisReport",
    "extract_calibration",
    "infer_absolute_distance",
    "analyze_run",
    "jsonable",
]

V0_FORMS = ("exponential", "logarithmic")
MODEL_CAVEAT = (
    "model-conditional: the corrected residual is attributed entirely to an x^-4 law; "
    "non-Coulombian patch effects would be absorbed into K_Cas"
)


def jsonable(obj):
    """Convert numpy scalars/arrays and tuples to plain JSON types; non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


# --------------------------------------------------------------------------- calibration


@dataclass
class CalibrationPoint:
    V_pzt: float
    parabola: VoltageParabola
    fit: FitResult
    V: np.ndarray
    nu_sq: np.ndarray
    sigma: np.ndarray

    def to_dict(self):
        p = self.parabola
        return {
            "V_pzt": self.V_pzt,
            "nu0_sq": p.nu0_sq,
            "K_el": p.K_el,
            "V0": p.V0,
            "sigma_nu0_sq": p.sigma_nu0_sq,
            "sigma_K_el": p.sigma_K_el,
            "sigma_V0": p.sigma_V0,
            "n_bias": int(self.V.size),
            "chi2_red": self.fit.chi2_red,
        }


@dataclass
class Calibration:
    points: list[CalibrationPoint]
    skipped: list[dict]
    references_used: bool

    def column(self, name: str) -> np.ndarray:
        if name == "V_pzt":
            return np.array([p.V_pzt for p in self.points])
        return np.array([getattr(p.parabola, name) for p in self.points])


def _reference_corrected(nu_b, t_b, nu_r, t_r):
    """Reference each biased nu^2 to the mean of the unbiased readings just before and after it."""
    ref_sq = nu_r**2
    out = np.empty_like(nu_b)
    for i, (nu, t) in enumerate(zip(nu_b, t_b)):
        before = np.nonzero(t_r < t)[0]
        after = np.nonzero(t_r > t)[0]
        near = [ref_sq[before[-1]]] if before.size else []
        if after.size:
            near.append(ref_sq[after[0]])
        out[i] = nu**2 - np.mean(near) + ref_sq.mean()
    return out


def _fit_with_scale(V, y, sigma):
    """Parabola fit; with ``sigma=None`` the scatter is estimated from the residuals."""
    if sigma is not None:
        return (*fit_parabola(V, y, sigma), sigma)
    par, fr = fit_parabola(V, y, 1.0)
    s = math.sqrt(fr.chi2 / fr.dof) if fr.dof > 0 and fr.chi2 > 0 else 0.0
    # noiseless input: keep a tiny positive weight so downstream weights stay finite
    s = max(s, 1e-12 * float(np.max(np.abs(y))))
    par, fr = fit_parabola(V, y, s)
    return par, fr, s


def extract_calibration(run: RunDataset, sigma_nu_hz: Optional[float] = None) -> Calibration:
    """One vertex-form parabola per PZT voltage.

    Biased readings are referenced to the average of the unbiased readings
    taken just before and after them when such records exist. ``sigma_nu_hz``
    is the frequency noise per reading; when omitted it is taken from the run
    metadata, and failing that estimated from the parabola residuals.
    """
    if sigma_nu_hz is None:
        meta = run.metadata.get("noise_freq_hz")
        sigma_nu_hz = float(meta) if meta else None
    rec = run.record
    points, skipped = [], []
    has_refs = bool(np.any(rec == REFERENCE))
    for v in np.unique(run.V_pzt[(rec == BIASED) | (rec == REFERENCE)]):
        at = run.V_pzt == v
        b = at & (rec == BIASED)
        r = at & (rec == REFERENCE)
        V = run.V_bias[b]
        nu = run.nu_m[b]
        if np.unique(V).size < 3:
            skipped.append({"V_pzt": float(v), "reason": f"only {np.unique(V).size} distinct bias values"})
            continue
        if np.any(r):
            y = _reference_corrected(nu, run.t[b], run.nu_m[r], run.t[r])
            factor = math.sqrt(1.5)  # own noise plus the averaged pair of references
        else:
            y = nu**2
            factor = 1.0
        sigma = None if not sigma_nu_hz else 2.0 * nu * sigma_nu_hz * factor
        try:
            par, fr, s = _fit_with_scale(V, y, sigma)
        except FitError as exc:
            skipped.append({"V_pzt": float(v), "reason": str(exc)})
            continue
        points.append(CalibrationPoint(float(v), par, fr, V, y, np.broadcast_to(s, V.shape).astype(float)))
    return Calibration(points, skipped, has_refs)


def infer_absolute_distance(model: PowerLawModel, beta: float, V_pzt, K_el):
    """``(x_asymptote, x_curvature)``: from the fitted asymptote and from the curvature magnitude."""
    m = model if model.beta == beta else PowerLawModel(model.alpha, model.V0_pzt, model.e, beta, model.V_pzt_max, model.mode)
    return m.distance_from_asymptote(V_pzt), m.distance_from_curvature(K_el)


# --------------------------------------------------------------------------- options and report


@dataclass
class AnalysisOptions:
    """Knobs of :func:`analyze_run`. ``R`` and ``beta`` default to the run metadata.

    ``material`` selects the Lifshitz overlay: ``"drude"`` (gold Drude
    parameters), ``"none"`` to skip it, or an explicit material response.
    """

    kel_rel_error: float = DEFAULT_KEL_REL_ERROR
    distance_mode: str = "fixed"
    m_eff: Optional[float] = None
    sigma_nu_hz: Optional[float] = None
    v0_forms: tuple = V0_FORMS
    log_Lam: Optional[float] = None
    log_Vlog: Optional[float] = None
    ode_rtol: float = 1e-10
    ode_atol: float = 1e-9
    xn_rel: float = 0.2
    material: Union[str, MaterialResponse] = "drude"
    lifshitz: LifshitzConfig = field(default_factory=LifshitzConfig)
    include_stability: bool = True
    delta_x: float = 8e-9
    R: Optional[float] = None
    beta: Optional[float] = None

    def __post_init__(self):
        if self.distance_mode not in ("fixed", "free"):
            raise ValueError("distance_mode must be 'fixed' or 'free'")
        bad = set(self.v0_forms) - set(V0_FORMS)
        if bad:
            raise ValueError(f"unknown V0 forms {sorted(bad)}")
        if self.kel_rel_error < 0:
            raise ValueError("kel_rel_error must be non-negative")
        if isinstance(self.material, str) and self.material not in ("drude", "none"):
            raise ValueError("material must be 'drude', 'none' or a material response")

    def material_response(self):
        if isinstance(self.material, str):
            return None if self.material == "none" else GOLD_DRUDE
        return self.material

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["v0_forms"] = list(self.v0_forms)
        d["lifshitz"] = self.lifshitz.to_dict()
        if not isinstance(self.material, str):
            d["material"] = self.material.to_dict()
        return jsonable(d)

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisOptions":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown analysis option keys: {sorted(unknown)}")
        if "lifshitz" in d:
            d["lifshitz"] = LifshitzConfig(**d["lifshitz"])
        if isinstance(d.get("material"), dict):
            d["material"] = material_from_dict(d["material"])
        if "v0_forms" in d:
            d["v0_forms"] = tuple(d["v0_forms"])
        return cls(**d)


@dataclass
class AnalysisReport:
    """Key-value tree of results plus two-column plot series.

    ``sections`` and ``series`` hold only JSON types so that the report
    round-trips through a file; ``objects`` keeps the live fit objects of the
    run that produced it and is not serialized.
    """

    metadata: dict = field(default_factory=dict)
    sections: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    objects: dict = field(default_factory=dict, compare=False, repr=False)

    def __getitem__(self, key):
        return self.sections[key]

    def __contains__(self, key):
        return key in self.sections

    def add_series(self, name, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        self.series[name] = [[float(a), float(b)] for a, b in zip(x[ok], y[ok])]

    def fail(self, stage: str, exc: BaseException):
        self.failures[stage] = {"type": type(exc).__name__, "message": str(exc)}

    def casimir(self, branch: str) -> dict:
        return self.sections["casimir_fit"][branch]

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "sections": self.sections,
            "series": self.series,
            "failures": self.failures,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisReport":
        return cls(d.get("metadata", {}), d.get("sections", {}), d.get("series", {}), d.get("failures", {}))


# --------------------------------------------------------------------------- stages


def _power_law_stage(rep, cal, beta, opts):
    V = cal.column("V_pzt")
    K = cal.column("K_el")
    sK = np.sqrt(cal.column("sigma_K_el") ** 2 + (opts.kel_rel_error * K) ** 2)
    rep.objects["kel_sigma"] = sK
    rep.add_series("kel_vs_vpzt", V, K)
    out = {}
    for mode in ("fixed", "free"):
        try:
            model, fr = fit_power_law(V, K, sK, mode=mode, beta=beta)
        except FitError as exc:
            rep.fail(f"power_law_{mode}", exc)
            continue
        rep.objects[f"power_law_{mode}"] = model
        out[mode] = {"model": model.to_dict(), "fit": fr.to_dict()}
        vv = np.linspace(V.min(), V.max(), 200)
        rep.add_series(f"kel_fit_{mode}", vv, model(vv))
        xa, xc = infer_absolute_distance(model, beta, V, K)
        out[mode]["x_asymptote"] = xa
        out[mode]["x_curvature"] = xc
        rep.add_series(f"distance_{mode}", xa, xc)
    return out


def _distances(rep, cal, beta, opts):
    model = rep.objects.get(f"power_law_{opts.distance_mode}")
    if model is None:
        raise FitError(f"no {opts.distance_mode} power-law fit available for distance inference")
    return model.distance_from_asymptote(cal.column("V_pzt"))


def _stability_stage(rep, cal, beta, opts):
    V = cal.column("V_pzt")
    K = cal.column("K_el")
    sK = rep.objects["kel_sigma"]
    out = {}
    for mode in ("fixed", "free"):
        try:
            scan = stability_scan(V, K, sK, mode=mode, beta=beta)
        except FitError as exc:
            rep.fail(f"stability_{mode}", exc)
            continue
        out[mode] = scan.to_rows()
        n = scan.n_points
        for name in ("alpha", "x0", "e"):
            rep.add_series(f"stability_{mode}_{name}", n, scan.trajectory(name))
    try:
        ds = displacement_sensitivity(V, K, sK, delta_x=opts.delta_x, beta=beta, mode="free")
        out["displacement"] = {
            "delta_x": ds.delta_x,
            "alpha_relative_change": list(ds.relative_change("alpha")),
            "e_change": list(ds.change("e")),
            "x0_change": list(ds.change("x0")),
        }
    except FitError as exc:
        rep.fail("displacement_sensitivity", exc)
    return out


def _casimir_fit(x, y, s):
    A = np.column_stack([np.ones_like(x), -(x**-4)])
    # rescale the x^-4 column for conditioning; undone below
    scale = float(np.max(x**-4))
    A[:, 1] /= scale
    fr = linear_lstsq(A, y, s, ("nu_p_sq", "K_Cas"), units={"nu_p_sq": "Hz^2", "K_Cas": "Hz^2 m^4"})
    D = np.diag([1.0, 1.0 / scale])
    fr = FitResult(fr.names, D @ fr.values, D @ fr.covariance @ D, fr.chi2, fr.dof, units=fr.units)
    return fr


def _branch_chain(form, x, V0, sV0, nu0, s_nu0, g, m_eff, opts, fit=None, dtheta=None):
    """V0 fit -> ODE -> residual -> Casimir fit for one form; returns all intermediates."""
    if fit is None:
        fit = fit_v0_model(x, V0, sV0, form, Lam=opts.log_Lam, Vlog=opts.log_Vlog)
    model = fit.model
    if dtheta is not None:
        model = replace(model, **{n: getattr(model, n) + d for n, d in zip(fit.fit.names, dtheta)})
    bc = largest_gap_boundary_condition(model, x.max())
    sol = solve_vc_ode(model, g.R, bc, x.min(), rtol=opts.ode_rtol, atol=opts.ode_atol,
                       estimate_error=dtheta is None)
    dnu = residual_frequency_sq(x, sol, g, m_eff)
    corrected = nu0 - dnu
    return fit, sol, dnu, corrected, _casimir_fit(x, corrected, s_nu0)


def _upstream_covariance(form, x, V0, sV0, nu0, s_nu0, g, m_eff, opts, fit, upstream):
    """Covariance of (nu_p^2, K_Cas) induced by the V0-model, distance-asymptote and mass uncertainties.

    Linear propagation with central differences; each step is one standard
    deviation of the perturbed parameter (or a small relative step if that is
    negligible).
    """
    beta, sig_v0pzt, sig_m = upstream
    names = list(fit.fit.names)
    cov_theta = fit.fit.covariance
    vals = fit.fit.values
    k = len(names)
    n = k + 2
    Sigma = np.zeros((n, n))
    Sigma[:k, :k] = cov_theta
    Sigma[k, k] = sig_v0pzt**2
    Sigma[k + 1, k + 1] = sig_m**2
    steps = np.sqrt(np.diag(Sigma))
    floor = np.r_[1e-6 * np.maximum(np.abs(vals), 1e-6), 1e-6 * np.max(x) / beta, 1e-6 * m_eff]
    steps = np.maximum(steps, floor)

    def evaluate(i, h):
        if i < k:
            d = np.zeros(k)
            d[i] = h
            fr = _branch_chain(form, x, V0, sV0, nu0, s_nu0, g, m_eff, opts, fit=fit, dtheta=d)[-1]
        elif i == k:
            fr = _branch_chain(form, x + beta * h, V0, sV0, nu0, s_nu0, g, m_eff, opts)[-1]
        else:
            fr = _branch_chain(form, x, V0, sV0, nu0, s_nu0, g, m_eff + h, opts, fit=fit)[-1]
        return fr.values

    J = np.column_stack([(evaluate(i, h) - evaluate(i, -h)) / (2 * h) for i, h in enumerate(steps)])
    return J @ Sigma @ J.T


def _v0_branch(rep, form, x, V0, sV0, g, m_eff, nu0, s_nu0, opts, upstream):
    out = {}
    try:
        fit = fit_v0_model(x, V0, sV0, form, Lam=opts.log_Lam, Vlog=opts.log_Vlog)
    except FitError as exc:
        rep.fail(f"v0_fit_{form}", exc)
        return None
    out["v0_fit"] = fit.to_dict()
    xx = np.geomspace(x.min(), x.max(), 200)
    rep.add_series(f"v0_fit_{form}", xx, fit.model(xx))
    try:
        _, sol, dnu, corrected, fr = _branch_chain(form, x, V0, sV0, nu0, s_nu0, g, m_eff, opts, fit=fit)
    except (OdeError, ValueError) as exc:
        rep.fail(f"ode_{form}", exc)
        return out
    except FitError as exc:
        rep.fail(f"casimir_fit_{form}", exc)
        return out
    rep.objects[f"ode_{form}"] = sol
    od = sol.to_dict()
    od["Vc_at_data"] = sol(x)
    try:
        od["xn_sensitivity"] = xn_sensitivity(fit.model, g.R, x.max(), x.min(), rel=opts.xn_rel,
                                              rtol=opts.ode_rtol, atol=opts.ode_atol)
    except (OdeError, ValueError) as exc:
        od["xn_sensitivity"] = {"error": str(exc)}
    out["ode"] = od
    rep.add_series(f"vc_{form}", sol.x_grid[::-1], sol.Vc[::-1])
    out["residual"] = {"x": x, "delta_nu_e_sq": dnu, "corrected_nu_sq": corrected}
    rep.add_series(f"residual_{form}", x, corrected)
    rep.add_series(f"electrostatic_residual_{form}", x, dnu)
    cf = fr.to_dict()
    cf["covariance_statistical"] = cf["covariance"]
    cf["errors_statistical"] = cf["errors"]
    try:
        up = _upstream_covariance(form, x, V0, sV0, nu0, s_nu0, g, m_eff, opts, fit, upstream)
        fr = FitResult(fr.names, fr.values, fr.covariance + up, fr.chi2, fr.dof, units=fr.units)
        cf["covariance"] = fr.covariance.tolist()
        cf["errors"] = fr.errors
        cf["uncertainty"] = "statistical plus propagated V0-model, distance-asymptote and mass uncertainties"
    except (OdeError, FitError, ValueError) as exc:
        cf["uncertainty"] = f"statistical only; propagation failed: {exc}"
    out["casimir_fit"] = {**cf, "note": MODEL_CAVEAT}
    rep.objects[f"casimir_fit_{form}"] = fr
    return out


def _lifshitz_stage(rep, x, nu_p_sq, g, m_eff, opts):
    mat = opts.material_response()
    cant = Cantilever(m_eff=m_eff)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PFAWarning)
        shift = np.array([sphere_plane_casimir_shift(float(xi), g, cant, mat, opts.lifshitz) for xi in x])
    rep.add_series("lifshitz_curve", x, nu_p_sq + shift)
    return {"material": mat.to_dict(), "T": opts.lifshitz.T, "x": x, "shift": shift,
            "nu_p_sq": nu_p_sq, "curve": nu_p_sq + shift}


def analyze_run(run: RunDataset, options: Optional[AnalysisOptions] = None) -> AnalysisReport:
    """Run the full analysis chain; stage failures are recorded, not raised.

    Both minimizing-potential forms are carried through the contact-potential
    chain and the Casimir fit, each as its own branch.
    """
    opts = options or AnalysisOptions()
    beta = opts.beta or run.metadata.get("beta")
    R = opts.R or run.metadata.get("R")
    if beta is None or R is None:
        raise ValueError("beta and R must be given in the options or the run metadata")
    g = Geometry(R=float(R))
    rep = AnalysisReport(metadata={
        "tool_version": __version__,
        "config_hash": run.metadata.get("config_hash"),
        "seed": run.metadata.get("seed"),
        "source": dict(jsonable(run.metadata)),
        "options": opts.to_dict(),
    })
    S = rep.sections

    cal = extract_calibration(run, opts.sigma_nu_hz)
    rep.objects["calibration"] = cal
    S["calibration"] = {"points": [p.to_dict() for p in cal.points], "skipped": cal.skipped,
                        "references_used": cal.references_used}
    for i, p in enumerate(cal.points):
        rep.add_series(f"parabola_{i:02d}", p.V, p.nu_sq)
    if len(cal.points) < 4:
        rep.fail("calibration", FitError(f"only {len(cal.points)} usable distances"))
        return _finish(rep)

    if run.cap_C.size:
        try:
            sC = float(run.metadata.get("noise_C") or 0.0) or None
            cf, fr = fit_capacitance(run.cap_V_pzt, run.cap_C, sC or 1.0, beta=beta)
            if sC is None and fr.dof > 0:
                fr.covariance = fr.covariance * max(fr.chi2_red, 0.0)
            S["capacitance"] = {"C0": cf.C0, "A": cf.A, "V0_pzt": cf.V0_pzt,
                                "discrepancy": cf.discrepancy(R), "fit": fr.to_dict()}
            rep.add_series("capacitance", run.cap_V_pzt, run.cap_C)
        except FitError as exc:
            rep.fail("capacitance", exc)

    S["power_law"] = _power_law_stage(rep, cal, beta, opts)
    try:
        x = _distances(rep, cal, beta, opts)
    except FitError as exc:
        rep.fail("distances", exc)
        return _finish(rep)
    if np.any(x <= 0):
        rep.fail("distances", ValueError("inferred distances are not all positive"))
        return _finish(rep)
    fixed = rep.objects.get("power_law_fixed")
    if opts.m_eff is not None:
        m_eff, m_src = float(opts.m_eff), "option"
    elif fixed is not None:
        m_eff, m_src = fixed.effective_mass(R), "fixed power law"
    else:
        rep.fail("effective_mass", FitError("no fixed power-law fit to derive the effective mass"))
        return _finish(rep)
    S["distances"] = {"mode": opts.distance_mode, "x": x, "m_eff": m_eff, "m_eff_source": m_src}

    if opts.include_stability:
        S["stability"] = _stability_stage(rep, cal, beta, opts)

    V0 = cal.column("V0")
    sV0 = np.maximum(cal.column("sigma_V0"), 1e-12)
    nu0 = cal.column("nu0_sq")
    s_nu0 = np.maximum(cal.column("sigma_nu0_sq"), 1e-12 * np.abs(nu0))
    order = np.argsort(x)
    x, V0, sV0, nu0, s_nu0 = x[order], V0[order], sV0[order], nu0[order], s_nu0[order]
    rep.add_series("v0_data", x, V0)
    rep.add_series("residual_raw", x, nu0)
    try:
        raw = _casimir_fit(x, nu0, s_nu0)
        S["casimir_fit_uncorrected"] = {**raw.to_dict(), "note": MODEL_CAVEAT}
    except FitError as exc:
        rep.fail("casimir_fit_uncorrected", exc)

    pl = rep.objects[f"power_law_{opts.distance_mode}"]
    pl_err = S["power_law"][opts.distance_mode]["fit"]["errors"]
    sig_m = 0.0
    if m_src == "fixed power law":
        sig_m = m_eff * S["power_law"]["fixed"]["fit"]["errors"]["alpha"] / fixed.alpha
    upstream = (beta, pl_err["V0_pzt"], sig_m)
    S["branches"] = {}
    S["casimir_fit"] = {}
    for form in opts.v0_forms:
        out = _v0_branch(rep, form, x, V0, sV0, g, m_eff, nu0, s_nu0, opts, upstream)
        if out is None:
            continue
        if "casimir_fit" in out:
            S["casimir_fit"][form] = out.pop("casimir_fit")
        S["branches"][form] = out

    if opts.material_response() is not None:
        ref = rep.objects.get("casimir_fit_exponential") or next(
            (rep.objects[k] for k in rep.objects if k.startswith("casimir_fit_")), None)
        if ref is None:
            rep.fail("lifshitz", FitError("no Casimir fit to anchor nu_p^2"))
        else:
            try:
                S["lifshitz"] = _lifshitz_stage(rep, x, ref["nu_p_sq"], g, m_eff, opts)
            except (LifshitzError, ValueError) as exc:
                rep.fail("lifshitz", exc)
    return _finish(rep)


def _finish(rep: AnalysisReport) -> AnalysisReport:
    rep.sections = jsonable(rep.sections)
    rep.metadata = jsonable(rep.metadata)
    chi = {}
    pl = rep.sections.get("power_law", {})
    for mode, d in pl.items():
        chi[f"power_law_{mode}"] = d["fit"]["chi2_red"]
    for form, d in rep.sections.get("branches", {}).items():
        chi[f"v0_{form}"] = d["v0_fit"]["fit"]["chi2_red"]
    for form, d in rep.sections.get("casimir_fit", {}).items():
        chi[f"casimir_{form}"] = d["chi2_red"]
    if "capacitance" in rep.sections:
        chi["capacitance"] = rep.sections["capacitance"]["fit"]["chi2_red"]
    rep.sections["chi2_red"] = chi
    return rep
