from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from fracctl.control_synthesis import (
    ControlProblem,
    approx_controllability_sweep,
    control_udelta,
    coupled_solve,
    decreasing_beyond,
    fit_rate,
    gramian,
    grid_gramian,
    resolvent_apply,
    resolvent_matrix,
)
from fracctl.inclusion_select import GrowthData, IntervalMap, SelectionStrategy
from fracctl.mild_solver import Constants, LinearMap, MildSolver, PointwiseMap, ScenarioSpec, contraction_certificate
from fracctl.spectral_model import ControlOperator, FractionalFamilies, SpectralSpace
from fracctl.stochastic_engine import MonteCarloEstimate, QWienerSpec

from oracles import GRAMIAN_DIAG_3

ALPHA = 4.0 / 3.0
R = ALPHA / 2


def const_phi(v):
    v = np.asarray(v, dtype=float)
    return lambda t: np.tile(v, (np.size(t), 1))


@pytest.fixture(scope="module")
def fam8():
    return FractionalFamilies(R, 8)


def test_gramian_on_empty_interval_is_zero(fam8):
    mu = gramian(fam8, ControlOperator.example_5_1(8), 1.0, 1.0)
    assert not np.any(mu.matrix)


def test_gramian_entries_match_quadrature(fam8):
    B = ControlOperator.example_5_1(8)
    mu = gramian(fam8, B, 0.0, 1.0)
    assert mu.diag[0] == pytest.approx(GRAMIAN_DIAG_3, abs=1e-12)
    # the modes {1, 2} block carries BB* = [[4, 2], [2, 1]]
    cross, _ = quad(lambda t: fam8.p(t)[0] * fam8.p(t)[1], 0.0, 1.0, epsabs=1e-14, limit=200)
    assert mu.block[0, 1] == pytest.approx(2.0 * cross, abs=1e-11)
    assert np.all(mu.eigenvalues > 0)


def test_gramian_is_additive_and_monotone(fam8):
    B = ControlOperator.example_5_1(8)
    full = gramian(fam8, B, 0.0, 1.0).matrix
    tail = gramian(fam8, B, 0.4, 1.0).matrix
    # mu_0 - mu_0.4 = int_0^0.4 P(1 - s) BB* P(1 - s) ds
    for i, j in [(0, 0), (0, 1), (4, 4)]:
        part, _ = quad(lambda s: fam8.p(1.0 - s)[i] * fam8.p(1.0 - s)[j], 0.0, 0.4, epsabs=1e-14, limit=200)
        assert full[i, j] - tail[i, j] == pytest.approx(B.bbstar[i, j] * part, abs=1e-11)
    assert np.linalg.eigvalsh(full - tail).min() > -1e-14


def test_grid_gramian_converges_to_quadrature_gramian():
    scn = ScenarioSpec(ALPHA, 1.0, 3)
    ref = gramian(FractionalFamilies(R, 3), scn.control, 0.0, 1.0).matrix
    errs = [np.max(np.abs(grid_gramian(MildSolver(scn, n, workers=1)).matrix - ref)) for n in (128, 256)]
    assert errs[1] < errs[0] < 1e-2


def test_resolvent_examples():
    assert resolvent_apply(1.0, np.array([[2.0]]), np.array([1.0]))[0] == pytest.approx(1.0 / 3.0)
    mu = np.diag([0.5, 2.0])
    v = np.array([1.0, 1.0])
    norms = [np.linalg.norm(d * resolvent_apply(d, mu, v)) for d in (1.0, 0.1, 0.01, 0.001)]
    assert all(b < a for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 3e-3
    batch = np.random.default_rng(0).normal(size=(4, 3, 2))
    out = resolvent_apply(0.3, mu, batch)
    assert np.allclose(out, batch @ resolvent_matrix(0.3, mu).T)
    with pytest.raises(ValueError):
        resolvent_apply(0.0, mu, v)


@given(seed=st.integers(0, 2**31), delta=st.floats(1e-6, 1e3))
@settings(max_examples=100, deadline=None)
def test_resolvent_norm_bound(seed, delta):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(5, 5))
    mu = a @ a.T * rng.random()
    assert np.linalg.norm(resolvent_matrix(delta, mu), 2) <= 1.0 / delta + 1e-12 * max(1.0, 1.0 / delta)


def _nonlinear_scenario(noise=None, n=3):
    sp = SpectralSpace(n)
    f1 = PointwiseMap(sp, lambda x, u, ud: 0.1 * np.sin(u))
    return ScenarioSpec(ALPHA, 1.0, n, a=0.5, phi=const_phi(np.linspace(1.0, 0.2, n)), f1=f1,
                        f2=LinearMap(0.1, 0.05), nu2=lambda t: np.asarray(t) - 0.5,
                        noise=noise or QWienerSpec.zero(n))


def test_free_target_needs_no_control():
    scn = _nonlinear_scenario()
    solver = MildSolver(scn, 64, workers=1)
    free, _ = solver.picard_solve(tol=1e-14)
    target = free.terminal()[0]
    for delta in (1.0, 1e-3):
        traj, rep = coupled_solve(solver, ControlProblem(target, delta), tol=1e-14)
        assert rep.converged
        assert np.max(np.abs(traj.controls)) < 1e-9
        assert np.max(np.abs(traj.terminal()[0] - target)) < 1e-10
    rep = approx_controllability_sweep(solver, target, [1.0, 0.1, 0.01], samples=1, tol=1e-14)
    assert max(e.mean for e in rep.terminal_errors) < 1e-20


def test_control_vanishes_as_delta_grows():
    scn = _nonlinear_scenario()
    solver = MildSolver(scn, 64, workers=1)
    free, _ = solver.picard_solve(tol=1e-14)
    target = np.ones(3)
    sizes = [np.max(np.abs(control_udelta(solver, ControlProblem(target, d), free))) for d in (1e2, 1e4, 1e6)]
    assert sizes[1] < sizes[0] / 50 and sizes[2] < sizes[1] / 50


def test_affine_problem_converges_in_two_sweeps():
    scn = ScenarioSpec(ALPHA, 1.0, 1, phi=const_phi([1.0]))
    _, rep = coupled_solve(MildSolver(scn, 64, workers=1), ControlProblem(np.array([0.3]), 0.1), tol=1e-14)
    assert rep.converged and rep.iterations <= 2


@pytest.mark.parametrize("delta", [1.0, 0.1, 0.01])
def test_one_mode_closed_form(delta):
    scn = ScenarioSpec(ALPHA, 1.0, 1, phi=const_phi([1.0]))
    solver = MildSolver(scn, 256, workers=1)
    free = solver.picard_solve()[0].terminal()[0, 0]
    mu = grid_gramian(solver).matrix[0, 0]
    target = 2.0
    traj, _ = coupled_solve(solver, ControlProblem(np.array([target]), delta), tol=1e-14)
    err = abs(traj.terminal()[0, 0] - target)
    assert err == pytest.approx(delta / (delta + mu) * abs(target - free), rel=1e-10)


def test_time_varying_resolvent_agrees_without_state_feedback():
    scn = ScenarioSpec(ALPHA, 1.0, 2, phi=const_phi([1.0, -1.0]))
    solver = MildSolver(scn, 64, workers=1)
    target = np.array([0.5, 0.5])
    a, _ = coupled_solve(solver, ControlProblem(target, 0.05), tol=1e-14)
    b, _ = coupled_solve(solver, ControlProblem(target, 0.05, resolvent="time_varying"), tol=1e-14)
    assert np.allclose(a.states, b.states, atol=1e-12)


def test_martingale_target_is_realized_per_path():
    scn = ScenarioSpec(ALPHA, 1.0, 2, noise=QWienerSpec.power_law(2))
    solver = MildSolver(scn, 32, workers=1)
    integrand = np.ones((solver.grid.n_intervals, 2))
    prob = ControlProblem(np.zeros(2), 1e-3, martingale_integrand=integrand)
    traj, rep = coupled_solve(solver, prob, samples=4, seed=1, tol=1e-14)
    assert rep.converged
    w_b = np.stack([c.increments.sum(axis=1) for c in traj.chunks])[0]
    assert np.allclose(traj.targets, w_b, atol=1e-14)


def contraction_scenario(n=3):
    """Weak nonlinearities with their exact squared Lipschitz constants."""
    sp = SpectralSpace(n)
    # 0.02 sin is 0.02-Lipschitz; (0.02 z + 0.01 zd)^2 <= 5e-4 (z^2 + zd^2); q_max 0.1 times 0.1^2
    constants = Constants(4e-4, 4e-4, 5e-4, 5e-4, 0.0, (), (), GrowthData(w_hat=1e-3, ell=1.0))
    return ScenarioSpec(ALPHA, 1.0, n, a=0.5, phi=const_phi(np.linspace(1.0, 0.2, n)),
                        f1=PointwiseMap(sp, lambda x, u, ud: 0.02 * np.sin(u)), f2=LinearMap(0.02, 0.01),
                        nu2=lambda t: np.asarray(t) - 0.5, G=IntervalMap.linear_singleton(0.1),
                        noise=QWienerSpec.power_law(n, 0.1), constants=constants)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_contraction_scenario_converges(seed):
    rng = np.random.default_rng(seed)
    scn = contraction_scenario()
    cert = contraction_certificate(scn, 50.0)
    assert cert.satisfied
    _, rep = coupled_solve(MildSolver(scn, 64, workers=1), ControlProblem(rng.normal(size=3), 50.0),
                           SelectionStrategy("midpoint"), tol=1e-12, samples=64, seed=seed)
    assert rep.converged and rep.empirical_rate <= cert.lhs + 0.1


def test_sweep_helpers():
    est = [MonteCarloEstimate(1.0, 0.1, 10, 0), MonteCarloEstimate(0.5, 0.1, 10, 0),
           MonteCarloEstimate(0.4, 0.1, 10, 0)]
    assert decreasing_beyond(est[:2]) and not decreasing_beyond(est)
    assert fit_rate([1.0, 0.1, 0.01], [1.0, 1e-2, 1e-4]) == pytest.approx(2.0)
    assert math.isnan(fit_rate([1.0, 0.1], [0.0, 0.0]))
    with pytest.raises(ValueError):
        approx_controllability_sweep(None, np.zeros(1), [0.1, 1.0])
