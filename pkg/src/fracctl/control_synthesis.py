"""Controllability Gramian, resolvent control and the delta sweep.

The Gramian on [y, b] is mu_y = int_y^b P_r(b-s) B B* P_r(b-s) ds; in the
eigenbasis its (i, j) entry is (BB*)_ij int_y^b p_i(b-s) p_j(b-s) ds.

The control is u(x) = B* P_r(b-x) beta, where the bracket beta is the
resolvent applied to the gap between the target and the uncontrolled
terminal value.  On the solver grid the control term at node i is
Gamma_i beta with Gamma_i = sum_{j<i} P_r(t_i-t_j) B B* P_r(b-t_j) dt_j, and
Gamma at the last node is the grid Gramian, so with the default resolvent
the terminal value is exactly target - delta (delta I + mu)^(-1) (target - free).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_jacobi

from .errors import NotConverged
from .inclusion_select import SelectionStrategy
from .mild_solver import MildSolver, PicardReport
from .spectral_model import ControlOperator, FractionalFamilies
from .stochastic_engine import MonteCarloEstimate, Trajectory

RESOLVENT_MODES = ("initial", "time_varying")


@dataclass(frozen=True)
class GramianModel:
    matrix: np.ndarray
    y: float
    b: float

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", 0.5 * (m + m.T))

    @property
    def n_modes(self):
        return self.matrix.shape[0]

    @property
    def block(self):
        """Entries on modes {1, 2}."""
        return self.matrix[:2, :2]

    @property
    def diag(self):
        """Diagonal entries for modes n >= 3."""
        return np.diag(self.matrix)[2:]

    @property
    def eigenvalues(self):
        return np.linalg.eigvalsh(self.matrix)

    def as_dict(self):
        return {"y": self.y, "b": self.b, "eigenvalues": self.eigenvalues.tolist()}


def gramian(fam: FractionalFamilies, control: ControlOperator, y: float, b: float, quad_steps: int = 64):
    """Gramian on [y, b] by Gauss-Jacobi quadrature.

    With T = b - y and t = T v^(1/(2r)), p_i(t) p_j(t) dt becomes
    T^(4r-1)/(2r) v^(1 - 1/(2r)) e_i(v) e_j(v) dv where e_n = E_{2r,2r}(-n^2 T^(2r) v)
    is smooth, so ``quad_steps`` Jacobi nodes integrate it to near machine precision.
    """
    if not 0.0 <= y <= b:
        raise ValueError("need 0 <= y <= b")
    n = fam.n_modes
    if y == b:
        return GramianModel(np.zeros((n, n)), y, b)
    r = fam.r
    T = b - y
    expo = 1.0 - 1.0 / (2 * r)
    x, w = roots_jacobi(quad_steps, 0.0, expo)
    v = 0.5 * (x + 1.0)
    w = w * 0.5 ** (expo + 1.0)
    t = T * v ** (1.0 / (2 * r))
    e = fam.p(t) / (t ** (2 * r - 1.0))[:, None]  # E_{2r,2r}(-n^2 t^(2r))
    inner = np.einsum("k,ki,kj->ij", w, e, e)
    mu = control.bbstar * inner * T ** (4 * r - 1.0) / (2 * r)
    return GramianModel(mu, y, b)


def grid_gramian(solver: MildSolver, node: int = 0):
    """Left-point Gramian on [t_node, b] consistent with the solver's quadrature."""
    pb = solver.p_to_b[node:]
    dt = solver.grid.dt[node:]
    mu = solver._bb * np.einsum("j,ji,jk->ik", dt, pb, pb)
    return GramianModel(mu, float(solver.grid.times[node]), solver.grid.b)


def resolvent_apply(delta: float, mu, v):
    """(delta I + mu)^(-1) v for a GramianModel or matrix ``mu``; v may be batched (..., N)."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    m = mu.matrix if isinstance(mu, GramianModel) else np.asarray(mu, dtype=float)
    a = delta * np.eye(m.shape[0]) + m
    v = np.asarray(v, dtype=float)
    return np.linalg.solve(a, v.reshape(-1, m.shape[0]).T).T.reshape(v.shape)


def resolvent_matrix(delta: float, mu):
    m = mu.matrix if isinstance(mu, GramianModel) else np.asarray(mu, dtype=float)
    return np.linalg.inv(delta * np.eye(m.shape[0]) + m)


@dataclass(frozen=True)
class ControlProblem:
    """Steer zeta(b) toward ``target`` (+ int phi dw when a martingale integrand is given)."""

    target: np.ndarray
    delta: float
    martingale_integrand: np.ndarray | None = None
    resolvent: str = "initial"

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.resolvent not in RESOLVENT_MODES:
            raise ValueError(f"resolvent must be one of {RESOLVENT_MODES}")
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float))

    def realized_target(self, increments):
        """Per-sample target, shape (S, N)."""
        s = increments.shape[0]
        base = np.broadcast_to(self.target, (s, self.target.size))
        if self.martingale_integrand is None:
            return base.copy()
        phi = np.asarray(self.martingale_integrand, dtype=float)[: increments.shape[1]]
        return base + np.sum(phi[None] * increments, axis=1)


class _ControlTables:
    """Per-delta resolvents on a solver grid."""

    def __init__(self, solver: MildSolver, prob: ControlProblem):
        self.solver = solver
        self.prob = prob
        mu0 = grid_gramian(solver, 0)
        self.mu0 = mu0
        self.R0 = resolvent_matrix(prob.delta, mu0)
        self.Ry = None
        self.Rimp = None
        if prob.resolvent == "time_varying" or prob.martingale_integrand is not None:
            k = solver.grid.n_intervals
            # mu_{t_j}: tail sums of the per-interval Gramian contributions
            pb = solver.p_to_b
            contrib = np.einsum("j,ji,jk->jik", solver.grid.dt, pb, pb) * solver._bb
            tails = np.cumsum(contrib[::-1], axis=0)[::-1]
            eye = np.eye(solver.scn.n_modes)
            self.Ry = np.linalg.inv(prob.delta * eye + tails)  # (K, N, N)
            self.Rimp = np.stack([self.Ry[right] if right < k else np.linalg.inv(prob.delta * eye)
                                  for _, right in solver.grid.impulse_nodes]) if solver.grid.impulse_nodes else None

    def bracket(self, ev, increments):
        """The resolvent bracket beta per sample, shape (S, N)."""
        prob = self.prob
        target = np.broadcast_to(prob.target, ev.terminal_free.shape)
        if prob.resolvent == "initial":
            beta = (target - ev.states[:, -1]) @ self.R0.T
        else:
            beta = (target - ev.terminal_free) @ self.R0.T
            beta -= np.einsum("jnm,sjm->sn", self.Ry, ev.terminal_parts)
            if ev.terminal_impulses is not None and len(ev.terminal_impulses):
                beta -= np.einsum("pnm,psm->sn", self.Rimp, ev.terminal_impulses)
        if prob.martingale_integrand is not None:
            phi = np.asarray(prob.martingale_integrand, dtype=float)[: increments.shape[1]]
            beta += np.einsum("jnm,sjm->sn", self.Ry, phi[None] * increments)
        return beta

    def control_path(self, beta):
        """u(t_i) = B* P_r(b - t_i) beta, shape (S, M, channels); zero at t = b."""
        solver = self.solver
        pb = np.vstack([solver.p_to_b, np.zeros((1, solver.scn.n_modes))])
        return solver.scn.control.b_star_apply(pb[None] * beta[:, None, :])


def control_udelta(solver: MildSolver, prob: ControlProblem, traj, fractions=None, increments=None, g=None):
    """Control path u_delta (S, M, channels) built from the current iterate ``traj``."""
    states = traj.states if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    if states.ndim == 2:
        states = states[None]
    s = states.shape[0]
    shape = (s, solver.grid.n_intervals, solver.scn.n_modes)
    inc = np.zeros(shape) if increments is None else np.broadcast_to(increments, shape)
    frac = np.full(states.shape, 0.5) if fractions is None else np.broadcast_to(fractions, states.shape)
    tables = _ControlTables(solver, prob)
    ev = solver.evaluate(states, frac, inc, g=g, terminal_parts=prob.resolvent == "time_varying")
    return tables.control_path(tables.bracket(ev, inc))


def coupled_solve(solver: MildSolver, prob: ControlProblem, strat: SelectionStrategy = SelectionStrategy(),
                  tol: float = 1e-12, max_iter: int = 60, samples: int = 1, seed: int = 0, offset: int = 0,
                  raise_on_failure: bool = True):
    """Picard iteration with the control recomputed from each iterate.

    Returns (trajectory, report); the trajectory carries ``controls`` (S, M,
    channels) and ``targets`` (S, N) as extra attributes.
    """
    tables = _ControlTables(solver, prob)
    tv = prob.resolvent == "time_varying"

    def sweep(ch):
        ev = solver.evaluate(ch.states, ch.fractions, ch.increments, terminal_parts=tv)
        beta = tables.bracket(ev, ch.increments)
        new = ev.states + np.einsum("inm,sm->sin", solver.gamma, beta)
        ev.beta = beta
        return new, ev

    traj, report = solver.iterate(sweep, samples, seed, strat, tol, max_iter, offset, raise_on_failure=False)
    betas = np.concatenate([e.beta for e in traj.extras])
    traj.controls = tables.control_path(betas)
    traj.targets = np.concatenate([prob.realized_target(c.increments) for c in traj.chunks])
    traj.gramian = tables.mu0
    if not report.converged and raise_on_failure:
        raise NotConverged(f"coupled iteration stopped after {max_iter} sweeps with gap {report.final_gap:.3e}",
                           report, traj)
    return traj, report


@dataclass
class DeltaSweepReport:
    deltas: list
    terminal_errors: list
    monotone_flag: bool
    fitted_rate: float
    gramian_eigenvalues: list
    uncontrollable_directions: int = 0
    error_floor: float = 0.0
    converged: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    sup_norms: list = field(default_factory=list)
    sigma: float = 2.0

    def as_dict(self):
        return {
            "deltas": list(self.deltas),
            "terminal_errors": [e.as_dict() for e in self.terminal_errors],
            "monotone_flag": self.monotone_flag,
            "fitted_rate": self.fitted_rate,
            "gramian_eigenvalues": list(self.gramian_eigenvalues),
            "uncontrollable_directions": self.uncontrollable_directions,
            "error_floor": self.error_floor,
            "converged": list(self.converged),
            "picard": [r.as_dict() for r in self.reports],
            "sup_norms": list(self.sup_norms),
            "sigma": self.sigma,
        }


def decreasing_beyond(estimates, sigma=2.0):
    """True when each estimate is below its predecessor by more than sigma combined std errors."""
    for e0, e1 in zip(estimates, estimates[1:]):
        if not e0.mean - e1.mean > sigma * math.hypot(e0.std_error, e1.std_error):
            return False
    return True


def fit_rate(deltas, means):
    d = np.asarray(deltas, dtype=float)
    m = np.asarray(means, dtype=float)
    ok = m > 0
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(d[ok]), np.log(m[ok]), 1)[0])


def approx_controllability_sweep(solver: MildSolver, target, deltas, samples: int = 2000, seed: int = 0,
                                 strat: SelectionStrategy = SelectionStrategy(), tol: float = 1e-10,
                                 max_iter: int = 60, martingale_integrand=None, resolvent: str = "initial",
                                 sigma: float = 2.0):
    """Run the coupled solve for each delta and record E||zeta(b) - target||^2."""
    deltas = [float(d) for d in deltas]
    if any(d <= 0 for d in deltas) or any(d2 >= d1 for d1, d2 in zip(deltas, deltas[1:])):
        raise ValueError("deltas must be positive and strictly decreasing")
    mu = grid_gramian(solver, 0)
    eig, vec = np.linalg.eigh(mu.matrix)
    null = eig <= 1e-14 * max(1.0, float(eig.max()))
    errors, converged, reports, sups = [], [], [], []
    floor = 0.0
    for d in deltas:
        prob = ControlProblem(target, d, martingale_integrand, resolvent)
        traj, rep = coupled_solve(solver, prob, strat, tol, max_iter, samples, seed, raise_on_failure=False)
        miss = traj.terminal() - traj.targets
        errors.append(MonteCarloEstimate.from_samples(np.sum(miss**2, axis=1), seed))
        converged.append(rep.converged)
        reports.append(rep)
        sups.append(_sup_norms(traj))
        if np.any(null):
            floor = float(np.mean(np.sum((miss @ vec[:, null]) ** 2, axis=1)))
    return DeltaSweepReport(
        deltas=deltas,
        terminal_errors=errors,
        monotone_flag=decreasing_beyond(errors, sigma),
        fitted_rate=fit_rate(deltas, [e.mean for e in errors]),
        gramian_eigenvalues=eig.tolist(),
        uncontrollable_directions=int(null.sum()),
        error_floor=floor,
        converged=converged,
        reports=reports,
        sup_norms=sups,
        sigma=sigma,
    )


def _sup_norms(traj):
    """Sampled sup of ||f1||^2, ||f2||^2 and ||g||^2 on the final sweep."""
    out = {}
    for key in ("f1", "f2", "g"):
        vals = [np.max(np.sum(getattr(e, key) ** 2, axis=-1)) for e in traj.extras]
        out[key] = float(max(vals)) if vals else 0.0
    return out
