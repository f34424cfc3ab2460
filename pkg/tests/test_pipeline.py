import math

import numpy as np
import pytest

from casimir_calib.core import Cantilever
from casimir_calib.electrostatics import Constant
from casimir_calib.lifshitz import GOLD_DRUDE, ideal_casimir_coefficient
from casimir_calib.pipeline import (
    AnalysisOptions,
    AnalysisReport,
    RunDataset,
    SimulationConfig,
    analyze_run,
    baseline_config,
    config_hash,
    extract_calibration,
    simulate_run,
)
from casimir_calib.pipeline.simulate import BIASED, REFERENCE

FAST = AnalysisOptions(material="none", include_stability=False)
K_CAS = ideal_casimir_coefficient(30.9e-3, 0.46e-3)
NU_P_SQ = Cantilever().nu_p ** 2


@pytest.fixture(scope="module")
def noiseless_report():
    return analyze_run(simulate_run(baseline_config()), AnalysisOptions(material="none"))


# --------------------------------------------------------------------------- simulation


def test_simulation_deterministic_and_seed_sensitive():
    cfg = baseline_config(noise_freq_hz=0.003, noise_kel_rel=0.04, seed=7)
    a, b = simulate_run(cfg), simulate_run(cfg)
    assert a == b
    assert simulate_run(baseline_config(noise_freq_hz=0.003, seed=8)) != a
    assert a.metadata["config_hash"] == config_hash(cfg)


def test_config_round_trip_and_hash():
    cfg = baseline_config(material=GOLD_DRUDE, vc_model=Constant(0.02), vc_role="contact", seed=3)
    back = SimulationConfig.from_dict(cfg.to_dict())
    assert back == cfg
    assert config_hash(back) == config_hash(cfg)
    assert config_hash(baseline_config(seed=4)) != config_hash(cfg)
    with pytest.raises(ValueError):
        SimulationConfig.from_dict({**cfg.to_dict(), "colour": 1})


@pytest.mark.parametrize("bad", [
    dict(vc_role="other"), dict(material="silver"), dict(noise_freq_hz=-1.0), dict(n_bias=2),
    dict(beta=0.0), dict(distances=(1e-7, 0.1)), dict(drift_amplitude_m=70e-9),
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        baseline_config(**bad)


def test_run_layout():
    cfg = baseline_config()
    run = simulate_run(cfg)
    n = len(cfg.distances)
    assert np.sum(run.record == BIASED) == n * cfg.n_bias
    assert np.sum(run.record == REFERENCE) == n * (cfg.n_bias + 1)
    assert np.all(np.isnan(run.V_bias[run.record == REFERENCE]))
    assert np.all(np.diff(run.t) > 0)
    # approach: PZT voltage never decreases
    assert np.all(np.diff(run.V_pzt) >= 0)
    assert run.cap_C.size == cfg.n_capacitance
    assert len(run.samples) == len(run)


def test_drift_envelope():
    A = 5e-9
    nominal = np.sort(baseline_config().gaps())
    rep = analyze_run(simulate_run(baseline_config(drift_amplitude_m=A)), FAST)
    x = np.sort(np.array(rep["distances"]["x"]))
    assert np.max(np.abs(x - nominal)) <= A * 1.05


def test_references_remove_drift_within_a_sweep():
    chi = {}
    for refs in (True, False):
        run = simulate_run(baseline_config(nu_drift_hz=0.05, drift_timescale_s=1800, references=refs))
        cal = extract_calibration(run, sigma_nu_hz=0.003)
        chi[refs] = np.median([p.fit.chi2_red for p in cal.points])
    assert chi[True] < chi[False] / 10


# --------------------------------------------------------------------------- closed loop


def test_noiseless_closed_loop(noiseless_report):
    rep = noiseless_report
    assert rep.failures == {}
    for mode in ("fixed", "free"):
        m = rep["power_law"][mode]["model"]
        assert m["V0_pzt"] == pytest.approx(69.31, rel=1e-9)
        assert m["e"] == pytest.approx(-2.0, abs=1e-7)
    assert rep["distances"]["m_eff"] == pytest.approx(0.46e-3, rel=1e-8)
    x = np.array(rep["distances"]["x"])
    assert np.sort(x) == pytest.approx(np.sort(baseline_config().gaps()), rel=1e-8)
    for form in ("exponential",):
        p = rep.casimir(form)["params"]
        assert p["K_Cas"] == pytest.approx(K_CAS, rel=1e-4)
        assert p["nu_p_sq"] == pytest.approx(NU_P_SQ, rel=1e-8)


def test_branch_completeness(noiseless_report):
    rep = noiseless_report
    for form in ("exponential", "logarithmic"):
        br = rep["branches"][form]
        assert {"v0_fit", "ode", "residual"} <= set(br)
        cf = rep.casimir(form)
        assert {"params", "errors", "errors_statistical", "covariance", "uncertainty", "note"} <= set(cf)
        assert all(cf["errors"][k] >= cf["errors_statistical"][k] for k in cf["errors"])
        for s in (f"v0_fit_{form}", f"vc_{form}", f"residual_{form}", f"electrostatic_residual_{form}"):
            assert rep.series[s]
    for s in ("kel_vs_vpzt", "kel_fit_fixed", "kel_fit_free", "distance_fixed", "capacitance", "v0_data",
              "residual_raw", "stability_free_e", "parabola_00"):
        assert rep.series[s]
    assert set(rep["chi2_red"]) >= {"power_law_fixed", "power_law_free", "casimir_exponential"}


def test_corrected_residual_flatter():
    # no Casimir force: the raw vertex frequencies carry the electrostatic residual, the corrected ones do not
    rep = analyze_run(simulate_run(baseline_config(include_casimir=False)), FAST)
    br = rep["branches"]["exponential"]["residual"]
    raw = np.array(rep.series["residual_raw"])[:, 1]
    corrected = np.array(br["corrected_nu_sq"])
    assert np.ptp(corrected) < 1e-3 * np.ptp(raw)
    assert np.max(br["delta_nu_e_sq"]) > 100


def test_constant_contact_potential_flat():
    rep = analyze_run(simulate_run(baseline_config(vc_role="contact", vc_model=Constant(0.02))), FAST)
    v0 = np.array(rep.series["v0_data"])[:, 1]
    assert v0 == pytest.approx(0.02, abs=1e-9)
    assert np.max(np.abs(rep["branches"]["exponential"]["residual"]["delta_nu_e_sq"])) < 1e-9


def test_null_case_no_casimir():
    z = []
    for seed in range(5):
        cfg = baseline_config(include_casimir=False, noise_freq_hz=0.003, noise_kel_rel=0.04, seed=seed)
        cf = analyze_run(simulate_run(cfg), FAST).casimir("exponential")
        z.append(cf["params"]["K_Cas"] / cf["errors"]["K_Cas"])
    assert np.all(np.abs(z) < 3)


@pytest.mark.parametrize("mode", ["fixed", "free"])
def test_both_distance_methods(mode):
    rep = analyze_run(simulate_run(baseline_config()), AnalysisOptions(material="none", include_stability=False,
                                                                       distance_mode=mode))
    pl = rep["power_law"][mode]
    assert pl["x_asymptote"] == pytest.approx(pl["x_curvature"], rel=1e-6)
    assert rep["distances"]["mode"] == mode


def test_analysis_deterministic():
    run = simulate_run(baseline_config(noise_freq_hz=0.003, noise_kel_rel=0.04, seed=2))
    assert analyze_run(run, FAST).to_dict() == analyze_run(run, FAST).to_dict()


def test_failed_stage_recorded():
    run = simulate_run(baseline_config(distances=(1e-7, 2e-7, 4e-7)))
    rep = analyze_run(run, FAST)
    assert "calibration" in rep.failures
    assert "casimir_fit" not in rep


def test_lifshitz_overlay():
    rep = analyze_run(simulate_run(baseline_config()), AnalysisOptions(include_stability=False))
    lf = rep["lifshitz"]
    assert len(lf["shift"]) == 12 and all(s < 0 for s in lf["shift"])
    assert lf["nu_p_sq"] == rep.casimir("exponential")["params"]["nu_p_sq"]


def test_options_round_trip():
    o = AnalysisOptions(material=GOLD_DRUDE, v0_forms=("logarithmic",), log_Lam=1e-7)
    assert AnalysisOptions.from_dict(o.to_dict()) == o
    with pytest.raises(ValueError):
        AnalysisOptions.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        AnalysisOptions(distance_mode="other")


def test_report_dict_round_trip(noiseless_report):
    d = noiseless_report.to_dict()
    assert AnalysisReport.from_dict(d).to_dict() == d


# --------------------------------------------------------------------------- forward-model identities


def test_constant_contact_forward_identity():
    from casimir_calib.electrostatics import electrostatic_curvature

    cfg = baseline_config(vc_role="contact", vc_model=Constant(0.037), include_casimir=False)
    cal = extract_calibration(simulate_run(cfg))
    x = np.sort(cfg.gaps())[::-1]  # calibration points come in ascending V_pzt, i.e. descending gap
    assert cal.column("V0") == pytest.approx(0.037, abs=1e-9)
    assert cal.column("K_el") == pytest.approx(electrostatic_curvature(x, 30.9e-3, 0.46e-3), rel=1e-8)
    assert cal.column("nu0_sq") == pytest.approx(NU_P_SQ, rel=1e-12)


def test_drift_envelope_in_curvature_series():
    A, x = 200e-9, np.geomspace(0.5e-6, 3e-6, 12)
    cfg = baseline_config(distances=tuple(x), drift_amplitude_m=A, drift_timescale_s=12 * 3600.0)
    run = simulate_run(cfg)
    cal = extract_calibration(run)
    from casimir_calib.electrostatics import electrostatic_curvature

    gaps = np.sort(cfg.gaps())[::-1]
    x_eff = np.sqrt(electrostatic_curvature(gaps, 30.9e-3, 0.46e-3) / cal.column("K_el")) * gaps
    t_mid = np.array([np.mean(run.t[(run.V_pzt == p.V_pzt) & (run.record == "freq")]) for p in cal.points])
    expected = A * np.sin(2 * math.pi * t_mid / cfg.drift_timescale_s)
    dev = x_eff - gaps
    assert np.max(np.abs(dev)) <= A
    # the excursions follow the configured drift within the drift accrued during one sweep
    assert dev == pytest.approx(expected, abs=0.1 * A)


def test_extracted_v0_matches_injected_model():
    cfg = baseline_config(noise_freq_hz=0.003, seed=4)
    cal = extract_calibration(simulate_run(cfg))
    x = np.sort(cfg.gaps())[::-1]
    z = (cal.column("V0") - cfg.vc_model(x)) / cal.column("sigma_V0")
    assert np.all(np.abs(z) < 4)


def test_short_sweep_skipped_and_reported():
    run = simulate_run(baseline_config())
    keep = ~((run.V_pzt == run.V_pzt[0]) & (run.record == BIASED) & (np.arange(len(run)) > 3))
    cut = RunDataset(run.record[keep], run.V_pzt[keep], run.V_bias[keep], run.nu_m[keep], run.t[keep],
                     run.cap_V_pzt, run.cap_C, None, run.metadata)
    cal = extract_calibration(cut)
    assert len(cal.points) == 11
    assert cal.skipped[0]["V_pzt"] == run.V_pzt[0] and "distinct bias" in cal.skipped[0]["reason"]


def test_fixed_exponent_distance_mismatch_is_systematic():
    rep = analyze_run(simulate_run(baseline_config(anomaly_exponent=-1.7)), FAST)
    fixed = rep["power_law"]["fixed"]
    xa, xc = np.array(fixed["x_asymptote"]), np.array(fixed["x_curvature"])
    d = (xc / xa - 1)[np.argsort(xa)]
    # noiseless data: a smooth, sign-structured misfit, largest at the ends of the range
    assert np.count_nonzero(np.diff(np.sign(d))) == 2
    assert abs(d[0]) > 0.1 and abs(d[-1]) > 0.1
    free = rep["power_law"]["free"]
    assert np.array(free["x_curvature"]) == pytest.approx(np.array(free["x_asymptote"]), rel=1e-6)


def test_closed_loop_contact_potential_recovered(noiseless_report):
    from casimir_calib.contact_potential import largest_gap_boundary_condition, solve_vc_ode

    cfg = baseline_config()
    x = np.sort(cfg.gaps())
    truth = solve_vc_ode(cfg.vc_model, 30.9e-3, largest_gap_boundary_condition(cfg.vc_model, x.max()), x.min())
    got = np.array(noiseless_report["branches"]["exponential"]["ode"]["Vc_at_data"])
    assert got == pytest.approx(truth(x), abs=1e-6 * np.max(np.abs(truth(x))))


def test_failed_ode_stage_isolated(monkeypatch):
    from casimir_calib.contact_potential import OdeError
    from casimir_calib.pipeline import analysis

    real = analysis.solve_vc_ode

    def broken(v0, *a, **kw):
        if type(v0).__name__ == "Logarithmic":
            raise OdeError("forced failure")
        return real(v0, *a, **kw)

    monkeypatch.setattr(analysis, "solve_vc_ode", broken)
    rep = analyze_run(simulate_run(baseline_config()), FAST)
    assert rep.failures["ode_logarithmic"]["message"] == "forced failure"
    assert "logarithmic" not in rep["casimir_fit"]
    assert "ode" not in rep["branches"]["logarithmic"]
    assert "exponential" in rep["casimir_fit"]


def test_report_echoes_tolerances(noiseless_report):
    opts = noiseless_report.metadata["options"]
    assert opts["ode_rtol"] == 1e-10 and opts["lifshitz"]["quad_rel_tol"] == 1e-8
    assert noiseless_report["branches"]["exponential"]["ode"]["rtol"] == 1e-10
