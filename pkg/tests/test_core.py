import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from casimir_calib.core import (
    CONSTANTS,
    Cantilever,
    Geometry,
    RoughnessWarning,
    cantilever_predictions,
    equivalent_casimir_voltage,
    equivalent_voltage_by_gradient_matching,
    frequency_shift_from_gradient,
    pfa_capacitance,
    roughness_correction,
)
from casimir_calib.electrostatics import electrostatic_curvature

R = 30.9e-3
EPS0 = 8.8541878188e-12  # CODATA 2022, typed in independently of scipy


def test_constants_match_codata():
    assert CONSTANTS.eps0 == pytest.approx(EPS0, rel=1e-10, abs=0)
    assert CONSTANTS.hbar == pytest.approx(6.62607015e-34 / (2 * math.pi), rel=1e-14, abs=0)
    assert CONSTANTS.c == 299792458.0
    assert CONSTANTS.k_B == pytest.approx(1.380649e-23, rel=1e-12, abs=0)


def test_constants_immutable():
    with pytest.raises(Exception):
        CONSTANTS.c = 3e8


def test_capacitance_vanishes_at_radius():
    C, C1, C2 = pfa_capacitance(R, R)
    assert C == 0.0
    assert C1 == pytest.approx(-2 * math.pi * EPS0)


def test_slope_coefficient_close_to_quoted():
    # -2 pi eps0 R for R = 30.9 mm is -1.72 pF
    assert -2 * math.pi * EPS0 * R == pytest.approx(-1.72e-12, abs=0.005e-12)


def test_capacitance_at_one_micron():
    C, C1, C2 = pfa_capacitance(1e-6, R)
    k = 2 * math.pi * EPS0 * R
    assert C == pytest.approx(k * math.log(R / 1e-6), rel=1e-12)
    assert C == pytest.approx(17.77e-12, rel=1e-3)
    assert C1 == pytest.approx(-1.719e-6, rel=1e-3)
    assert C2 == pytest.approx(k / 1e-12, rel=1e-12, abs=0)


@pytest.mark.parametrize("x", [0.0, -1e-9, 2 * R])
def test_capacitance_domain(x):
    with pytest.raises(ValueError):
        pfa_capacitance(x, R)


@given(st.floats(1e-9, 1e-3))
def test_capacitance_derivatives_match_finite_differences(x):
    h = 1e-5 * x
    Cp, C1p, _ = pfa_capacitance(x + h, R)
    Cm, C1m, _ = pfa_capacitance(x - h, R)
    _, C1, C2 = pfa_capacitance(x, R)
    assert (Cp - Cm) / (2 * h) == pytest.approx(C1, rel=1e-6)
    assert (C1p - C1m) / (2 * h) == pytest.approx(C2, rel=1e-6)


def test_capacitance_vectorized():
    x = np.array([1e-7, 1e-6])
    C, C1, C2 = pfa_capacitance(x, R)
    assert C.shape == (2,)
    assert C[0] == pytest.approx(pfa_capacitance(1e-7, R)[0])


def test_frequency_shift_sign_and_zero():
    assert frequency_shift_from_gradient(0.0, 1e-3) == 0.0
    assert frequency_shift_from_gradient(-1.0, 1e-3) > 0
    with pytest.raises(ValueError):
        frequency_shift_from_gradient(1.0, 0.0)


def test_frequency_shift_matches_curvature_at_48nm():
    # gradient of the electrostatic force per volt^2: -C''/2
    x, m = 48e-9, 0.46e-3
    F1 = -0.5 * pfa_capacitance(x, R)[2]
    dnu = frequency_shift_from_gradient(F1, m)
    assert dnu == pytest.approx(electrostatic_curvature(x, R, m), rel=1e-12)
    assert dnu == pytest.approx(2.05e4, rel=5e-3)


def test_roughness_correction_values():
    assert roughness_correction(1e-6, 0.0, 0.0) == 1.0
    assert roughness_correction(40e-9, 4e-18, 2.4e-18) == pytest.approx(1.004, abs=5e-4)
    assert roughness_correction(80e-9, 4e-18, 2.4e-18) == pytest.approx(1.001, abs=5e-5)


def test_roughness_warns_when_not_perturbative():
    with pytest.warns(RoughnessWarning):
        roughness_correction(5e-9, 4e-18, 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        roughness_correction(7e-9, 4e-18, 0.0)


def test_roughness_domain():
    with pytest.raises(ValueError):
        roughness_correction(0.0, 1e-18, 1e-18)
    with pytest.raises(ValueError):
        roughness_correction(1e-7, -1e-18, 1e-18)


def test_equivalent_voltage_against_gradient_oracle():
    v = equivalent_casimir_voltage(1e-6)
    assert v == pytest.approx(equivalent_voltage_by_gradient_matching(1e-6), rel=1e-6)
    assert v == pytest.approx(17.1e-3, rel=5e-3)
    assert v == pytest.approx(17.5e-3, rel=0.1)


def test_equivalent_voltage_oracle_independent_of_radius():
    a = equivalent_voltage_by_gradient_matching(1e-6, R=1e-3)
    b = equivalent_voltage_by_gradient_matching(1e-6, R=5e-2)
    assert a == pytest.approx(b, rel=1e-9)


@given(st.floats(1e-8, 1e-4))
def test_equivalent_voltage_inverse_distance(x):
    assert equivalent_casimir_voltage(2 * x) == pytest.approx(equivalent_casimir_voltage(x) / 2, rel=1e-12)


def test_equivalent_voltage_domain():
    with pytest.raises(ValueError):
        equivalent_casimir_voltage(0.0)


def test_geometry_validation():
    Geometry()
    with pytest.raises(ValueError):
        Geometry(R=-1.0)
    with pytest.raises(ValueError):
        Geometry(R=1e-3, a=3e-3)
    with pytest.raises(ValueError):
        Geometry(h2_sphere=-1.0)


def test_cantilever_validation_and_mass():
    c = Cantilever()
    assert c.mass_consistency() < 0.05
    with pytest.raises(ValueError):
        Cantilever(m_eff=0.0)


def test_cantilever_predictions():
    c = Cantilever()
    nu, k, m = cantilever_predictions(c)
    # beam theory with a silicon Young modulus: within 1% of the observed ~894 Hz
    assert nu == pytest.approx(894.0, rel=0.01)
    assert k == pytest.approx(5.4e3, rel=0.02)
    assert m == pytest.approx(1.72e-4, rel=0.03)


@given(st.floats(0.5, 2.0))
def test_cantilever_frequency_scales_with_thickness(f):
    c = Cantilever()
    c2 = Cantilever(t=c.t * f)
    assert cantilever_predictions(c2)[0] == pytest.approx(f * cantilever_predictions(c)[0], rel=1e-12)
