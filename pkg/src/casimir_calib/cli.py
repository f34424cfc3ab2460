"""Command-line interface.

Settings are resolved as built-in defaults, then the JSON ``--config`` file,
then command-line flags (flags win). Exit codes: 0 success, 1 invalid input
or configuration, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .contact_potential import OdeError, fit_v0_model, largest_gap_boundary_condition, solve_vc_ode
from .core import Cantilever, Geometry
from .fitting import DEFAULT_KEL_REL_ERROR, FitError, fit_power_law, stability_scan
from .io import RunFileError, load_run_csv, read_table, write_report, write_run_csv, write_table
from .lifshitz import (
    GOLD_DRUDE,
    Drude,
    LifshitzConfig,
    LifshitzError,
    PerfectConductor,
    PFAWarning,
    bundled_gold_table,
    ideal_plane_plane_energy,
    load_optical_table,
    plane_plane_free_energy,
    sphere_plane_casimir_shift,
)
from .pipeline import AnalysisOptions, SimulationConfig, analyze_run, config_hash, extract_calibration, simulate_run
from .pipeline.analysis import jsonable

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3
EXAMPLE_CONFIG = "example"


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def load_config(path) -> dict:
    """Read a JSON config; ``"example"`` selects the bundled baseline configuration."""
    if path is None:
        return {}
    if str(path) == EXAMPLE_CONFIG:
        text = resources.files("casimir_calib").joinpath("data/example_config.json").read_text()
    else:
        text = Path(path).read_text(encoding="utf-8")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    return cfg


def _analysis_options(cfg: dict, args) -> AnalysisOptions:
    d = dict(cfg.get("analysis", {}))
    for flag, key in (("form", "v0_forms"), ("material", "material"), ("distance_mode", "distance_mode"),
                      ("kel_rel_error", "kel_rel_error"), ("ode_rtol", "ode_rtol"), ("ode_atol", "ode_atol"),
                      ("m_eff", "m_eff")):
        v = getattr(args, flag, None)
        if v is None:
            continue
        if key == "v0_forms":
            v = ["exponential", "logarithmic"] if v == "both" else [v]
        d[key] = v
    if getattr(args, "T", None) is not None:
        d.setdefault("lifshitz", {})["T"] = args.T
    return AnalysisOptions.from_dict(d)


def _stamp(run) -> dict:
    return {"tool_version": __version__, "config_hash": run.metadata.get("config_hash"),
            "seed": run.metadata.get("seed")}


# --------------------------------------------------------------------------- commands


def cmd_simulate(args, cfg):
    d = dict(cfg.get("simulation", {}))
    if args.seed is not None:
        d["seed"] = args.seed
    if args.noise_freq is not None:
        d["noise_freq_hz"] = args.noise_freq
    if args.noise_kel is not None:
        d["noise_kel_rel"] = args.noise_kel
    sim = SimulationConfig.from_dict(d)
    run = simulate_run(sim)
    write_run_csv(run, args.out)
    print(f"wrote {len(run)} frequency records and {run.cap_C.size} capacitance records to {args.out} "
          f"(config hash {config_hash(sim)}, seed {sim.seed})")


def cmd_calibrate(args, cfg):
    run = load_run_csv(args.run)
    opts = _analysis_options(cfg, args)
    cal = extract_calibration(run, opts.sigma_nu_hz)
    if not cal.points:
        raise FitError("no distance has a usable bias sweep")
    V = cal.column("V_pzt")
    K = cal.column("K_el")
    sK = np.sqrt(cal.column("sigma_K_el") ** 2 + (opts.kel_rel_error * K) ** 2)
    beta = opts.beta or run.metadata.get("beta")
    fits = {}
    for mode in ("fixed", "free"):
        try:
            m, fr = fit_power_law(V, K, sK, mode=mode, beta=beta)
            fits[mode] = {"model": m.to_dict(), "fit": fr.to_dict()}
        except FitError as exc:
            fits[mode] = {"error": str(exc)}
    write_table(args.out, {
        "V_pzt": V, "nu0_sq": cal.column("nu0_sq"), "sigma_nu0_sq": cal.column("sigma_nu0_sq"),
        "K_el": K, "sigma_K_el": sK, "V0": cal.column("V0"), "sigma_V0": cal.column("sigma_V0"),
    }, {**_stamp(run), "beta": beta, "R": run.metadata.get("R"), "kel_rel_error": opts.kel_rel_error,
        "power_law": fits, "skipped": cal.skipped})
    print(f"wrote {len(cal.points)} calibration points to {args.out}")
    for mode, f in fits.items():
        if "model" in f:
            m = f["model"]
            print(f"  {mode}: alpha={m['alpha']:.6g} V0_pzt={m['V0_pzt']:.6g} V e={m['e']:.4f} "
                  f"x0={m['x0'] * 1e9:.2f} nm chi2_red={f['fit']['chi2_red']}")
        else:
            print(f"  {mode}: failed: {f['error']}")


def cmd_contact_potential(args, cfg):
    forms = ["exponential", "logarithmic"] if args.form in (None, "both") else [args.form]
    d = cfg.get("analysis", {})
    if args.v0_table:
        cols, meta = read_table(args.v0_table)
        for c in ("x", "V0", "sigma_V0"):
            if c not in cols:
                raise UsageError(f"V0 table lacks column {c!r}")
        R = args.R or meta.get("R") or Geometry().R
        x, V0, s = cols["x"], cols["V0"], cols["sigma_V0"]
        stamp = {"tool_version": __version__, "config_hash": meta.get("config_hash"), "seed": meta.get("seed")}
        summary = {}
        for form in forms:
            fit = fit_v0_model(x, V0, s, form, Lam=d.get("log_Lam"), Vlog=d.get("log_Vlog"))
            sol = solve_vc_ode(fit.model, R, largest_gap_boundary_condition(fit.model, x.max()), x.min(),
                               rtol=args.ode_rtol or d.get("ode_rtol", 1e-10), atol=args.ode_atol or d.get("ode_atol", 1e-9))
            xs = sol.x_grid[::-1]
            write_table(_with_suffix(args.out, form), {"x": xs, "V0": fit.model(xs), "Vc": sol.Vc[::-1]},
                        {**stamp, "form": form, "v0_fit": fit.to_dict(), "rtol": sol.rtol, "atol": sol.atol})
            summary[form] = fit.fit.params
        print(json.dumps(jsonable(summary), indent=1))
        return
    if not args.run:
        raise UsageError("give --run or --v0-table")
    run = load_run_csv(args.run)
    args.form = args.form or "both"
    opts = _analysis_options(cfg, args)
    opts = AnalysisOptions.from_dict({**opts.to_dict(), "material": "none", "include_stability": False})
    rep = analyze_run(run, opts)
    paths = write_report(rep, args.out)
    _summarize(rep, paths)


def cmd_residuals(args, cfg):
    run = load_run_csv(args.run)
    opts = _analysis_options(cfg, args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PFAWarning)
        rep = analyze_run(run, opts)
    paths = write_report(rep, args.out)
    _summarize(rep, paths)


def _with_suffix(path, tag):
    p = Path(path)
    return p.with_name(f"{p.stem}.{tag}{p.suffix or '.csv'}")


def _summarize(rep, paths):
    print(f"wrote {paths[0]} and {len(paths) - 1} series files")
    for form, c in rep.sections.get("casimir_fit", {}).items():
        p, e = c["params"], c["errors"]
        print(f"  {form}: nu_p^2 = {p['nu_p_sq']:.6g} +- {e['nu_p_sq']:.2g} Hz^2, "
              f"K_Cas = {p['K_Cas']:.4g} +- {e['K_Cas']:.2g} Hz^2 m^4, chi2_red = {c['chi2_red']}")
    for stage, f in rep.failures.items():
        print(f"  stage {stage} failed: {f['message']}")
    if rep.failures:
        raise _StageFailures(rep.failures)


class _StageFailures(RuntimeError):
    pass


def _material(spec):
    if spec in (None, "drude"):
        return GOLD_DRUDE
    if spec == "perfect":
        return PerfectConductor()
    if spec == "table":
        return bundled_gold_table()
    if spec.startswith("table:"):
        return load_optical_table(spec[len("table:"):])
    if spec.startswith("drude:"):
        try:
            wp, gp = (float(v) for v in spec[len("drude:"):].split(","))
        except ValueError:
            raise UsageError("drude material takes 'drude:<omega_p eV>,<gamma_p eV>'") from None
        return Drude.from_ev(wp, gp)
    raise UsageError(f"unknown material {spec!r}")


def cmd_lifshitz(args, cfg):
    d = dict(cfg.get("lifshitz", {}))
    mat = _material(args.material or d.pop("material", None))
    d.pop("material", None)
    if args.T is not None:
        d["T"] = args.T
    x_min = args.x_min or d.pop("x_min", 50e-9)
    x_max = args.x_max or d.pop("x_max", 3e-6)
    n = args.n or d.pop("n", 20)
    R = args.R or d.pop("R", Geometry().R)
    m_eff = args.m_eff or d.pop("m_eff", Cantilever().m_eff)
    if not 0 < x_min < x_max:
        raise UsageError("need 0 < x-min < x-max")
    lcfg = LifshitzConfig(**d)
    g, cant = Geometry(R=R), Cantilever(m_eff=m_eff)
    x = np.geomspace(x_min, x_max, n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PFAWarning)
        E = np.array([plane_plane_free_energy(float(xi), mat, lcfg) for xi in x])
        shift = np.array([sphere_plane_casimir_shift(float(xi), g, cant, mat, lcfg) for xi in x])
    E_id = ideal_plane_plane_energy(x)
    meta = {"tool_version": __version__, "config_hash": config_hash({"material": mat.to_dict(), **lcfg.to_dict(),
                                                                     "R": R, "m_eff": m_eff}),
            "seed": None, "material": mat.to_dict(), "lifshitz": lcfg.to_dict(), "R": R, "m_eff": m_eff}
    write_table(args.out, {"x": x, "E_pp": E, "E_pp_ideal": E_id, "ratio": E / E_id, "dnu_sq_cas": shift}, meta)
    print(f"wrote {n} rows to {args.out}")


def cmd_stability(args, cfg):
    modes = ["fixed", "free"] if args.mode in (None, "both") else [args.mode]
    if args.calibration:
        cols, meta = read_table(args.calibration)
        for c in ("V_pzt", "K_el"):
            if c not in cols:
                raise UsageError(f"calibration table lacks column {c!r}")
        V, K = cols["V_pzt"], cols["K_el"]
        sK = cols.get("sigma_K_el", DEFAULT_KEL_REL_ERROR * K)
        beta = args.beta or meta.get("beta") or 87e-9
        stamp = {"tool_version": __version__, "config_hash": meta.get("config_hash"), "seed": meta.get("seed")}
    elif args.run:
        run = load_run_csv(args.run)
        cal = extract_calibration(run)
        V, K = cal.column("V_pzt"), cal.column("K_el")
        sK = np.sqrt(cal.column("sigma_K_el") ** 2 + (DEFAULT_KEL_REL_ERROR * K) ** 2)
        beta = args.beta or run.metadata.get("beta")
        stamp = _stamp(run)
    else:
        raise UsageError("give --calibration or --run")
    for mode in modes:
        scan = stability_scan(V, K, sK, mode=mode, beta=beta)
        out = _with_suffix(args.out, mode)
        write_table(out, {
            "n_points": scan.n_points, "alpha": scan.trajectory("alpha"), "V0_pzt": scan.trajectory("V0_pzt"),
            "e": scan.trajectory("e"), "x0": scan.trajectory("x0"),
            "chi2_red": [st.fit.chi2_red if st.fit else np.nan for st in scan.steps],
        }, {**stamp, "mode": mode, "beta": beta, "errors": [st.error for st in scan.steps if st.error]})
        print(f"wrote {len(scan.steps)} {mode} scan steps to {out}")


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="casimir-calib", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON config file ('example' for the bundled one)")
        return sp

    s = common(sub.add_parser("simulate", help="generate a synthetic run file"))
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--noise-freq", type=float, help="frequency noise per reading (Hz)")
    s.add_argument("--noise-kel", type=float, help="relative curvature noise")
    s.set_defaults(func=cmd_simulate)

    def analysis_flags(sp):
        sp.add_argument("--kel-rel-error", type=float)
        sp.add_argument("--distance-mode", choices=["fixed", "free"])
        sp.add_argument("--m-eff", type=float, help="effective mass (kg); default from the fixed power law")
        sp.add_argument("--ode-rtol", type=float)
        sp.add_argument("--ode-atol", type=float)

    s = common(sub.add_parser("calibrate", help="bias parabolas and curvature power law"))
    s.add_argument("--run", required=True)
    s.add_argument("--out", required=True, help="calibration table (CSV)")
    analysis_flags(s)
    s.set_defaults(func=cmd_calibrate)

    s = common(sub.add_parser("contact-potential", help="minimizing-potential fits and contact-potential ODE"))
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--run")
    src.add_argument("--v0-table", help="CSV with x, V0, sigma_V0 columns")
    s.add_argument("--form", choices=["exponential", "logarithmic", "both"])
    s.add_argument("--R", type=float)
    s.add_argument("--out", required=True)
    analysis_flags(s)
    s.set_defaults(func=cmd_contact_potential)

    s = common(sub.add_parser("residuals", help="full analysis chain and Casimir fit"))
    s.add_argument("--run", required=True)
    s.add_argument("--out", required=True, help="report (JSON); series go to sidecar CSV files")
    s.add_argument("--form", choices=["exponential", "logarithmic", "both"])
    s.add_argument("--material", choices=["drude", "none"])
    s.add_argument("--T", type=float)
    analysis_flags(s)
    s.set_defaults(func=cmd_residuals)

    s = common(sub.add_parser("lifshitz", help="plane-plane energy and sphere-plane frequency shift table"))
    s.add_argument("--material", help="drude, drude:<wp>,<gp>, perfect, table or table:<path>")
    s.add_argument("--T", type=float)
    s.add_argument("--x-min", type=float)
    s.add_argument("--x-max", type=float)
    s.add_argument("--n", type=int)
    s.add_argument("--R", type=float)
    s.add_argument("--m-eff", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_lifshitz)

    s = common(sub.add_parser("stability", help="power-law refits on growing subsets"))
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--calibration", help="table written by 'calibrate'")
    src.add_argument("--run")
    s.add_argument("--mode", choices=["fixed", "free", "both"])
    s.add_argument("--beta", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stability)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except (FitError, OdeError, LifshitzError, _StageFailures, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError,) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, RunFileError, ValueError, TypeError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
