from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import gamma, gammaln

from fracctl.errors import NonConvergent
from fracctl.special_functions import (
    SeriesControl,
    SubordinationParams,
    SubordinationRule,
    mainardi,
    mittag_leffler,
    subordinate,
    wright_chi,
)

from oracles import E_43_1_M1, INV_GAMMA_THIRD, INV_SQRT_PI, mainardi_kanter, mainardi_series, ml_series

R_SET = (0.55, 2.0 / 3.0, 0.9)


def test_mainardi_at_zero_is_reciprocal_gamma():
    assert wright_chi(0.5, 0.0) == pytest.approx(INV_SQRT_PI, abs=1e-15)
    assert wright_chi(2.0 / 3.0, 0.0) == pytest.approx(INV_GAMMA_THIRD, abs=1e-15)
    assert mainardi(0.5, 0.0) == pytest.approx(INV_SQRT_PI, abs=1e-15)


def test_mainardi_half_matches_gaussian_closed_form():
    z = np.linspace(0.0, 30.0, 301)
    exact = np.exp(-(z**2) / 4.0) / math.sqrt(math.pi)
    assert np.max(np.abs(mainardi(0.5, z) - exact)) < 1e-12


@pytest.mark.parametrize("rho", R_SET)
@pytest.mark.parametrize("z", [0.1, 0.7, 1.5])
def test_mainardi_matches_high_precision_series(rho, z):
    assert mainardi(rho, z) == pytest.approx(mainardi_series(rho, z), abs=1e-11)


@pytest.mark.parametrize("rho", R_SET)
@pytest.mark.parametrize("z", [3.0, 6.0, 12.0])
def test_mainardi_tail_matches_adaptive_kanter_integral(rho, z):
    # past z ~ 2 the series needs tens of thousands of terms at rho = 0.9
    assert mainardi(rho, z) == pytest.approx(mainardi_kanter(rho, z), abs=1e-12)


@pytest.mark.parametrize("rho", R_SET)
def test_mainardi_is_a_probability_density(rho):
    # oracle: adaptive quadrature of the evaluator, independent of the subordination rule
    mass, _ = quad(lambda t: mainardi(rho, t), 0.0, np.inf, limit=400, epsabs=1e-13)
    assert abs(mass - 1.0) < 1e-6
    assert abs(SubordinationRule(rho).mass - 1.0) < 1e-6
    z = np.linspace(0.0, 20.0, 401)
    assert np.all(mainardi(rho, z) >= -1e-14)


@pytest.mark.parametrize("rho", R_SET)
def test_mainardi_first_moment(rho):
    rule = SubordinationRule(rho)
    assert rule.integrate(lambda t: t) == pytest.approx(1.0 / gamma(1.0 + rho), abs=1e-8)


def test_series_reports_nonconvergence_with_value():
    with pytest.raises(NonConvergent) as info:
        wright_chi(0.9, 40.0)
    assert info.value.value is not None
    with pytest.raises(NonConvergent) as info:
        mittag_leffler(4.0 / 3.0, 1.0, -100.0)
    assert np.isfinite(info.value.value)


def test_mittag_leffler_reduces_to_elementary_functions():
    assert mittag_leffler(1.0, 1.0, 1.0) == pytest.approx(math.e, abs=1e-12)
    assert abs(mittag_leffler(2.0, 1.0, -((math.pi / 2) ** 2))) < 1e-8
    assert mittag_leffler(4.0 / 3.0, 1.0, -1.0) == pytest.approx(E_43_1_M1, abs=1e-12)


@given(
    alpha=st.floats(1.05, 2.0),
    beta=st.floats(0.5, 2.0),
    z=st.floats(-15.0, 0.0),
)
@settings(max_examples=40, deadline=None)
def test_mittag_leffler_matches_arbitrary_precision_series(alpha, beta, z):
    try:
        value = mittag_leffler(alpha, beta, z)
    except NonConvergent:
        # refusal is only allowed where the terms really outgrow double precision
        k = np.arange(400)
        peak = np.max(k * math.log(abs(z)) - gammaln(alpha * k + beta)) if z else 0.0
        assert math.exp(peak) > SeriesControl().max_peak
        return
    assert value == pytest.approx(ml_series(alpha, beta, z), abs=1e-9)


@pytest.mark.parametrize("z", [-1.0, -5.0, -10.0, -17.0])
def test_mittag_leffler_safe_range_at_four_thirds(z):
    assert mittag_leffler(4.0 / 3.0, 1.0, z) == pytest.approx(ml_series(4.0 / 3.0, 1.0, z), abs=1e-10)


def test_argument_validation():
    with pytest.raises(ValueError):
        mittag_leffler(2.5, 1.0, 0.0)
    with pytest.raises(ValueError):
        mittag_leffler(1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        wright_chi(1.2, 0.0)
    with pytest.raises(ValueError):
        wright_chi(0.5, -1.0)
    with pytest.raises(ValueError):
        SubordinationParams(0.4)
    with pytest.raises(ValueError):
        subordinate(1.0, lambda t: np.ones_like(t))
    with pytest.raises(ValueError):
        SeriesControl(abs_tol=0.0)


def test_subordination_examples():
    assert subordinate(2.0 / 3.0, lambda t: np.ones_like(t)) == pytest.approx(1.0, abs=1e-6)
    # cos(x^r theta n) at x = 0 is identically one
    assert subordinate(2.0 / 3.0, lambda t: np.cos(0.0 * t)) == pytest.approx(1.0, abs=1e-6)
    value = subordinate(2.0 / 3.0, lambda t: np.cos(t), max_frequency=1.0)
    assert abs(value - E_43_1_M1) < 1e-5


@pytest.mark.parametrize("r", R_SET)
@pytest.mark.parametrize("k", [0.5, 2.0, 5.0])
def test_subordinated_cosine_is_mittag_leffler(r, k):
    value = subordinate(r, lambda t: np.cos(k * t), max_frequency=k)
    assert abs(value - ml_series(2 * r, 1.0, -(k**2))) < 1e-8
