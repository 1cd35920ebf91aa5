from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import quad

from fracctl.errors import DimensionMismatch, NonConvergent
from fracctl.spectral_model import ControlOperator, FractionalFamilies, SpectralSpace, bound_constants

from oracles import E_43_1_M1, E_43_2_M1, E_43_43_M1, INT_P1_UNIT, INV_GAMMA_FOUR_THIRDS, family_oracle

R = 2.0 / 3.0


@pytest.fixture(scope="module")
def fam():
    return FractionalFamilies(R, 10)


def test_cosine_and_sine_examples():
    sp = SpectralSpace(4)
    v = np.array([1.0, -2.0, 3.0, 0.5])
    assert np.array_equal(sp.cosine_apply(0.0, v), v)
    assert np.allclose(sp.cosine_apply(math.pi, sp.unit(1)), -sp.unit(1), atol=1e-15)
    assert np.allclose(sp.cosine_apply(math.pi / 2, sp.unit(2)), -sp.unit(2), atol=1e-15)
    assert np.array_equal(sp.sine_apply(0.0, v), np.zeros(4))
    assert np.allclose(sp.sine_apply(math.pi / 2, sp.unit(1)), sp.unit(1), atol=1e-15)
    assert np.max(np.abs(sp.sine_apply(math.pi / 2, sp.unit(2)))) < 1e-12


def test_projection_round_trip():
    sp = SpectralSpace(8)
    coeffs = sp.project(lambda z: 3.0 * math.sqrt(2 / math.pi) * np.sin(2 * z))
    assert np.allclose(coeffs, 3.0 * sp.unit(2), atol=1e-12)
    c = np.linspace(-1, 1, 8)
    assert np.allclose(sp.to_spectral(sp.to_physical(c)), c, atol=1e-12)
    with pytest.raises(DimensionMismatch):
        sp.check(np.zeros(3))


def test_families_at_zero(fam):
    v = np.arange(1.0, 11.0)
    assert np.array_equal(fam.eval("C_r", 0.0, v), v)
    assert np.array_equal(fam.eval("S_r", 0.0, v), np.zeros(10))
    assert np.array_equal(fam.eval("P_r", 0.0, v), np.zeros(10))


@pytest.mark.parametrize("method", ["auto", "series", "subordination"])
def test_first_mode_at_one_matches_frozen_values(method):
    f = FractionalFamilies(R, 1, method=method)
    e1 = np.ones(1)
    assert abs(f.eval("C_r", 1.0, e1)[0] - E_43_1_M1) < 1e-5
    assert abs(f.eval("S_r", 1.0, e1)[0] - E_43_2_M1) < 1e-5
    assert abs(f.eval("P_r", 1.0, e1)[0] - E_43_43_M1) < 1e-5


@pytest.mark.parametrize("which", ["C_r", "S_r", "P_r"])
@pytest.mark.parametrize("r", [0.55, R, 0.9])
def test_auto_route_matches_arbitrary_precision_oracle(which, r):
    f = FractionalFamilies(r, 10)
    xs = np.array([0.05, 0.3, 0.7, 1.0])
    got = f.family(which, xs)
    for i, x in enumerate(xs):
        for n in (1, 4, 10):
            assert got[i, n - 1] == pytest.approx(family_oracle(which, r, n, x), abs=2e-9)


def test_sine_family_is_integral_of_cosine_family(fam):
    for x in (0.3, 1.0):
        for n in (1, 3, 7):
            ref, _ = quad(lambda y: fam.c(y)[n - 1], 0.0, x, epsabs=1e-13)
            assert fam.s(x)[n - 1] == pytest.approx(ref, abs=1e-10)


def test_resolvent_family_integral(fam):
    ref, _ = quad(lambda y: fam.p(y)[0], 0.0, 1.0, epsabs=1e-13)
    assert ref == pytest.approx(INT_P1_UNIT, abs=1e-10)
    # int_0^x p_n = (1 - c_n(x)) / n^2
    x = 0.8
    for n in (1, 2, 5):
        ref, _ = quad(lambda y: fam.p(y)[n - 1], 0.0, x, epsabs=1e-13)
        assert ref == pytest.approx((1.0 - fam.c(x)[n - 1]) / n**2, abs=1e-10)


def test_series_route_refuses_large_arguments():
    f = FractionalFamilies(R, 10, method="series")
    with pytest.raises(NonConvergent):
        f.c(np.array([1.0]))


def test_near_classical_limit_approaches_cosine():
    f = FractionalFamilies(0.999, 1)
    x = np.linspace(0.0, 1.0, 51)
    assert np.max(np.abs(f.c(x)[:, 0] - np.cos(x))) < 5e-3


def test_family_validation(fam):
    with pytest.raises(ValueError):
        FractionalFamilies(1.2, 3)
    with pytest.raises(ValueError):
        fam.c(-0.1)
    with pytest.raises(ValueError):
        fam.family("Q_r", 0.5)
    with pytest.raises(DimensionMismatch):
        fam.eval("C_r", 0.5, np.zeros(3))


def test_bound_constants_formulas():
    one = FractionalFamilies(R, 1)
    bc = bound_constants(one, 1.0)
    assert bc.M1 >= 1.0
    assert bc.M2 == pytest.approx(bc.M1 * 1.0)
    assert bc.M3 == pytest.approx(bc.M1 * INV_GAMMA_FOUR_THIRDS, rel=1e-12)
    bc8 = bound_constants(FractionalFamilies(R, 8), 1.0, ControlOperator.example_5_1(8))
    assert bc8.M4 == pytest.approx(5.0, abs=1e-12)


def test_control_operator_examples():
    B = ControlOperator.example_5_1(5)
    assert B.channels == [2, 3, 4, 5]
    u = np.zeros(4)
    u[0] = 1.0  # channel 2
    assert np.array_equal(B.b_apply(u), np.array([2.0, 1.0, 0.0, 0.0, 0.0]))
    bs = B.b_star_apply(np.array([1.0, 0, 0, 0, 0]))
    assert bs[0] == 2.0 and np.all(bs[1:] == 0.0)
    assert np.array_equal(B.b_apply(np.zeros(4)), np.zeros(5))
    with pytest.raises(DimensionMismatch):
        B.b_apply(np.zeros(5))
    with pytest.raises(DimensionMismatch):
        B.b_star_apply(np.zeros(4))


@given(
    u=arrays(np.float64, 7, elements=st.floats(-10, 10)),
    v=arrays(np.float64, 8, elements=st.floats(-10, 10)),
)
@settings(max_examples=100, deadline=None)
def test_adjoint_identity(u, v):
    B = ControlOperator.example_5_1(8)
    lhs = float(B.b_apply(u) @ v)
    rhs = float(u @ B.b_star_apply(v))
    assert lhs == pytest.approx(rhs, abs=1e-10 * (1 + abs(lhs)))
