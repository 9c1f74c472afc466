import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from gravlasov.errors import InvalidCasimirError
from gravlasov.kernel import (CasimirSpec, ModelParams, check_casimir,
                              kinetic_weight, kinetic_weight_inverse,
                              make_polytrope)


def test_model_params_validation():
    assert ModelParams(c=1.0).is_classical is False
    assert ModelParams().is_classical is True
    with pytest.raises(ValueError):
        ModelParams(c=0.0)
    with pytest.raises(ValueError):
        ModelParams(c=-2.0)


def test_kinetic_weight_examples():
    assert kinetic_weight(ModelParams(), 2.0) == 2.0
    assert kinetic_weight(ModelParams(c=1.0), 0.0) == 0.0
    # c=1, u=sqrt(3): 1*(sqrt(1+3)-1) = 1
    assert_allclose(kinetic_weight(ModelParams(c=1.0), math.sqrt(3.0)), 1.0,
                    rtol=1e-14)


def test_kinetic_weight_negative_speed_rejected():
    with pytest.raises(ValueError):
        kinetic_weight(ModelParams(), -0.1)
    with pytest.raises(ValueError):
        kinetic_weight_inverse(ModelParams(c=2.0), -1e-9)


def test_kinetic_weight_bounds_and_limit():
    u = np.linspace(0.0, 10.0, 200)
    for c in (0.5, 1.0, 3.0):
        params = ModelParams(c=c)
        gam = kinetic_weight(params, u)
        assert np.all(gam <= 0.5 * u * u + 1e-15)
        assert np.all(gam >= c * u - c * c - 1e-12)
        assert np.all(np.diff(gam) > 0)
        # finite-difference convexity
        assert np.all(np.diff(gam, 2) > -1e-12)
    huge = kinetic_weight(ModelParams(c=1e6), u)
    assert_allclose(huge, 0.5 * u * u, rtol=1e-9)


def test_kinetic_weight_inverse_examples():
    assert_allclose(kinetic_weight_inverse(ModelParams(), 2.0), 2.0, rtol=1e-14)
    assert_allclose(kinetic_weight_inverse(ModelParams(c=1.0), 1.0),
                    math.sqrt(3.0), rtol=1e-14)
    assert kinetic_weight_inverse(ModelParams(c=0.3), 0.0) == 0.0


@settings(max_examples=80, deadline=None)
@given(u=st.floats(min_value=1e-6, max_value=1e3),
       c=st.sampled_from([0.5, 1.0, 7.0, math.inf]))
def test_kinetic_weight_roundtrip(u, c):
    params = ModelParams(c=c)
    e = kinetic_weight(params, u)
    assert kinetic_weight_inverse(params, e) == pytest.approx(u, rel=1e-10)


def test_roundtrip_on_log_grid():
    u = np.logspace(-6, 3, 60)
    for c in (0.5, 2.0, math.inf):
        params = ModelParams(c=c)
        back = kinetic_weight_inverse(params, kinetic_weight(params, u))
        assert_allclose(back, u, rtol=1e-10)


def test_make_polytrope_values():
    spec = make_polytrope(2.0)
    assert spec.j(3.0) == 9.0
    assert spec.g_inv(6.0) == 3.0
    assert spec.p1 == spec.p2 == 2.0
    t = np.logspace(-6, 6, 50)
    assert_allclose(t * spec.j_prime(t) / spec.j(t), 2.0, rtol=1e-13)


def test_make_polytrope_rejects_small_exponent():
    with pytest.raises(ValueError):
        make_polytrope(1.4)
    with pytest.raises(ValueError):
        make_polytrope(1.5)


def test_check_casimir_polytrope_passes():
    report = check_casimir(make_polytrope(2.0), samples=100)
    assert report.passed
    assert report.ratio_min == pytest.approx(2.0, abs=1e-12)
    assert report.ratio_max == pytest.approx(2.0, abs=1e-12)


def test_check_casimir_cubic_plus_quadratic():
    # j = t^3 + t^2: ratio (3t+2)/(t+1) runs over (2, 3); g_inv written in the
    # rationalized form to stay accurate near zero
    spec = CasimirSpec(j=lambda t: np.asarray(t) ** 3 + np.asarray(t) ** 2,
                       j_prime=lambda t: 3.0 * np.asarray(t) ** 2 + 2.0 * np.asarray(t),
                       g_inv=lambda s: np.asarray(s) / (1.0 + np.sqrt(1.0 + 3.0 * np.asarray(s))),
                       p=2.0, p1=2.0, p2=3.0)
    report = check_casimir(spec, samples=150)
    assert report.passed
    assert 2.0 <= report.ratio_min <= report.ratio_max <= 3.0


def test_check_casimir_linear_fails_ratio():
    # linear j with (falsely) claimed admissible exponents: ratio is 1
    spec = CasimirSpec(j=lambda t: np.asarray(t, dtype=float),
                       j_prime=lambda t: np.ones_like(np.asarray(t, dtype=float)),
                       g_inv=lambda s: np.asarray(s, dtype=float),
                       p=2.0, p1=2.0, p2=2.0)
    report = check_casimir(spec, samples=50)
    assert not report.passed
    assert not report.ratio_ok
    assert not report.convex_ok
    assert report.ratio_min == pytest.approx(1.0)


def test_check_casimir_rejects_nonpositive():
    spec = CasimirSpec(j=lambda t: np.asarray(t, dtype=float) - 1.0,
                       j_prime=lambda t: np.ones_like(np.asarray(t, dtype=float)),
                       g_inv=lambda s: np.asarray(s, dtype=float),
                       p=2.0, p1=2.0, p2=2.0)
    with pytest.raises(InvalidCasimirError):
        check_casimir(spec, samples=20)


def test_check_casimir_reports_growth_constant():
    report = check_casimir(make_polytrope(2.5), samples=80)
    assert report.growth_ok
    assert report.growth_constant == pytest.approx(1.0, rel=1e-10)


def test_check_casimir_needs_two_samples():
    with pytest.raises(ValueError):
        check_casimir(make_polytrope(2.0), samples=1)
