"""Mild-solution operator and its Picard iteration.

For a path zeta on the grid, one sweep evaluates

    C_r(x)[phi(0) + h(zeta)] + S_r(x)[xi + f1(0, .)]
    - int_0^x C_r(x-y) f1(y) dy + int_0^x P_r(x-y) [B u(y) + f2(y) + Z(y)] dy
    + sum_{x_p < x} C_r(x - x_p) I_p + S_r(x - x_p) J_p,

with Z(y) = int_0^y varrho(y - t) g(t) dw(t) and g a selection of the
interval map G.  Time integrals are left-point sums on the grid, so every
integral becomes a matrix product with a precomputed kernel matrix.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import GridMismatch, MissingConstant, NotConverged
from .inclusion_select import GrowthData, IntervalMap, SelectionStrategy, select
from .spectral_model import BoundConstants, ControlOperator, FractionalFamilies, SpectralSpace, bound_constants
from .stochastic_engine import QWienerSpec, TimeGrid, Trajectory, ensemble_increments

# samples per work unit; fixed so results do not depend on the worker count
CHUNK = 64
WORKERS_ENV = "FRACCTL_WORKERS"


def default_workers():
    value = os.environ.get(WORKERS_ENV)
    if value:
        n = int(value)
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be a positive integer")
        return n
    return os.cpu_count() or 1


# -- state maps f(x, z_now, z_delayed) -------------------------------------


class ZeroMap:
    lipschitz = 0.0
    growth = 0.0

    def __call__(self, x, z, zd):
        return np.zeros(np.shape(z))


@dataclass(frozen=True)
class LinearMap:
    """kappa z + kappa_delayed z_delayed."""

    kappa: float
    kappa_delayed: float = 0.0

    @property
    def lipschitz(self):
        return self.kappa**2 + self.kappa_delayed**2

    @property
    def growth(self):
        return self.lipschitz

    def __call__(self, x, z, zd):
        return self.kappa * np.asarray(z) + self.kappa_delayed * np.asarray(zd)


@dataclass(frozen=True)
class ConstantMap:
    value: np.ndarray
    lipschitz = 0.0

    @property
    def growth(self):
        return float(np.sum(np.asarray(self.value) ** 2))

    def __call__(self, x, z, zd):
        return np.broadcast_to(np.asarray(self.value, dtype=float), np.shape(z)).copy()


class PointwiseMap:
    """Lift a pointwise function fn(x, u(z), u_delayed(z)) on [0, pi] to spectral vectors."""

    def __init__(self, space: SpectralSpace, fn, name="pointwise", lipschitz=None, growth=None):
        self.space = space
        self.fn = fn
        self.name = name
        self.lipschitz = lipschitz
        self.growth = growth

    def __call__(self, x, z, zd):
        u = self.space.to_physical(z)
        ud = self.space.to_physical(zd)
        x = np.asarray(x, dtype=float)[:, None]
        return self.space.to_spectral(self.fn(x, u, ud))


# -- impulses ---------------------------------------------------------------


@dataclass(frozen=True)
class ImpulseContext:
    """The path up to an impulse: ``path[:, node]`` is the left value at ``time``."""

    time: float
    times: np.ndarray
    path: np.ndarray
    node: int
    a: float


class ZeroJump:
    def __call__(self, ctx):
        return np.zeros(ctx.path[:, ctx.node].shape)

    def lipschitz(self, a, time):
        return 0.0


@dataclass(frozen=True)
class ConstantJump:
    value: np.ndarray

    def __call__(self, ctx):
        return np.broadcast_to(np.asarray(self.value, dtype=float), ctx.path[:, ctx.node].shape).copy()

    def lipschitz(self, a, time):
        return 0.0


@dataclass(frozen=True)
class LinearJump:
    """gain * zeta(x_p)."""

    gain: float

    def __call__(self, ctx):
        return self.gain * ctx.path[:, ctx.node]

    def lipschitz(self, a, time):
        return self.gain**2


@dataclass(frozen=True)
class IntegralJump:
    """int_{-a}^{x_p} beta(x_p - s) zeta(s) ds with beta(t) = c0 + c1 t (left-point rule)."""

    c0: float
    c1: float = 0.0

    def beta(self, t):
        return self.c0 + self.c1 * np.asarray(t)

    def weights(self, times, node, time):
        w = np.zeros(times.size)
        w[:node] = self.beta(time - times[:node]) * np.diff(times[: node + 1])
        return w

    def __call__(self, ctx):
        w = self.weights(ctx.times, ctx.node, ctx.time)
        return np.einsum("t,stn->sn", w, ctx.path)

    def lipschitz(self, a, time):
        t = np.linspace(0.0, time + a, 4097)
        return float(np.trapezoid(np.abs(self.beta(t)), t)) ** 2


@dataclass(frozen=True)
class Impulse:
    time: float
    jump: object = field(default_factory=ZeroJump)
    djump: object = field(default_factory=ZeroJump)


# -- scenario ---------------------------------------------------------------


@dataclass(frozen=True)
class Constants:
    """Lipschitz and growth constants (squared-norm form) of the scenario data."""

    L_f1: float | None = None
    k1: float | None = None
    L_f2: float | None = None
    k2: float | None = None
    L_h: float | None = None
    L_I: tuple = ()
    L_J: tuple = ()
    growth: GrowthData | None = None
    C2: float = 1.0

    @classmethod
    def zero(cls, n_impulses=0):
        z = (0.0,) * n_impulses
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, z, z, GrowthData(), 1.0)

    def as_dict(self):
        g = self.growth
        return {
            "L_f1": self.L_f1, "k1": self.k1, "L_f2": self.L_f2, "k2": self.k2, "L_h": self.L_h,
            "L_I": list(self.L_I), "L_J": list(self.L_J), "C2": self.C2,
            "ell": None if g is None else g.ell,
        }


def _identity(t):
    return np.asarray(t, dtype=float)


def _unit_kernel(t):
    return np.ones(np.shape(t))


@dataclass(frozen=True)
class ScenarioSpec:
    alpha: float
    b: float
    n_modes: int
    a: float = 0.0
    phi: Callable | None = None
    xi: np.ndarray | None = None
    h_times: tuple = ()
    h_weights: tuple = ()
    f1: Callable = field(default_factory=ZeroMap)
    f2: Callable = field(default_factory=ZeroMap)
    varrho: Callable = _unit_kernel
    G: IntervalMap = field(default_factory=IntervalMap.zero)
    nu1: Callable = _identity
    nu2: Callable = _identity
    nu3: Callable = _identity
    impulses: tuple = ()
    noise: QWienerSpec | None = None
    control: ControlOperator | None = None
    constants: Constants = field(default_factory=Constants)
    name: str = "custom"

    def __post_init__(self):
        if not 1.0 < self.alpha < 2.0:
            raise ValueError(f"alpha must lie in (1, 2), got {self.alpha}")
        if not self.b > 0:
            raise ValueError("b must be positive")
        if self.a < 0:
            raise ValueError("a must be >= 0")
        n = int(self.n_modes)
        if n < 1:
            raise ValueError("n_modes must be positive")
        xi = np.zeros(n) if self.xi is None else np.asarray(self.xi, dtype=float)
        if xi.shape != (n,):
            raise ValueError(f"xi must have {n} entries")
        object.__setattr__(self, "xi", xi)
        if len(self.h_times) != len(self.h_weights):
            raise ValueError("h_times and h_weights differ in length")
        if any(not 0.0 <= t <= self.b for t in self.h_times):
            raise ValueError("nonlocal times must lie in [0, b]")
        times = [imp.time for imp in self.impulses]
        if any(not 0.0 < t < self.b for t in times) or any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise ValueError("impulse times must be strictly increasing inside (0, b)")
        if self.noise is None:
            object.__setattr__(self, "noise", QWienerSpec.zero(n))
        elif self.noise.n_modes != n:
            raise ValueError("noise covariance has the wrong number of modes")
        if self.control is None:
            object.__setattr__(self, "control", ControlOperator.identity(n))
        elif self.control.n_modes != n:
            raise ValueError("control operator has the wrong number of modes")

    @property
    def r(self):
        return self.alpha / 2.0

    def phi_values(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.phi is None:
            return np.zeros((t.size, self.n_modes))
        return np.broadcast_to(np.asarray(self.phi(t), dtype=float), (t.size, self.n_modes)).copy()

    def with_(self, **changes):
        return replace(self, **changes)


# -- reports ----------------------------------------------------------------


@dataclass(frozen=True)
class PicardReport:
    iterations: int
    final_gap: float
    converged: bool
    empirical_rate: float
    gaps: tuple = ()

    def as_dict(self):
        return {
            "iterations": self.iterations,
            "final_gap": self.final_gap,
            "converged": self.converged,
            "empirical_rate": self.empirical_rate,
            "gaps": list(self.gaps),
        }


def _rate(gaps):
    """Geometric mean of successive gap ratios."""
    g = [x for x in gaps if x > 0]
    if len(gaps) < 2:
        return 0.0
    if len(g) < len(gaps):
        # a gap hit exactly zero: the map became exact after finitely many sweeps
        return 0.0
    return float((g[-1] / g[0]) ** (1.0 / (len(g) - 1)))


@dataclass(frozen=True)
class ContractionCertificate:
    Lambda: float
    delta: float
    lhs: float
    satisfied: bool
    bounds: BoundConstants | None = None

    def as_dict(self):
        return {
            "Lambda": self.Lambda,
            "delta": self.delta,
            "lhs": self.lhs,
            "satisfied": self.satisfied,
            "bounds": None if self.bounds is None else self.bounds.as_dict(),
        }


def contraction_certificate(scn: ScenarioSpec, delta: float, bounds: BoundConstants | None = None,
                            families: FractionalFamilies | None = None) -> ContractionCertificate:
    """Lambda and lhs = Lambda (1 + 6 M3^2 M4^2 b / delta); satisfied iff lhs < 1."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    c = scn.constants
    for key in ("L_h", "L_f1", "L_f2"):
        if getattr(c, key) is None:
            raise MissingConstant(key)
    if c.growth is None:
        raise MissingConstant("growth")
    n_imp = len(scn.impulses)
    if len(c.L_I) != n_imp:
        raise MissingConstant("L_I")
    if len(c.L_J) != n_imp:
        raise MissingConstant("L_J")
    if bounds is None:
        fam = families or FractionalFamilies(scn.r, scn.n_modes)
        bounds = bound_constants(fam, scn.b, scn.control)
    m1, m2, m3, m4 = bounds.M1, bounds.M2, bounds.M3, bounds.M4
    b = scn.b
    w_int = c.growth.integral("w_hat", b)
    lam = 14.0 * (
        m1 * c.L_h
        + 2.0 * c.L_f1 * (m2 + m1 * b)
        + 2.0 * m3 * b * c.L_f2
        + c.C2 * m3 * c.growth.ell * w_int
        + m1 * sum(c.L_I)
        + m2 * sum(c.L_J)
    )
    lhs = lam * (1.0 + 6.0 / delta * m3**2 * m4**2 * b)
    return ContractionCertificate(float(lam), float(delta), float(lhs), bool(lhs < 1.0), bounds)


# -- solver -----------------------------------------------------------------


@dataclass
class _Chunk:
    indices: np.ndarray
    increments: np.ndarray
    fractions: np.ndarray
    states: np.ndarray


@dataclass
class Evaluation:
    """One application of the mild-solution operator to an ensemble."""

    states: np.ndarray
    history: np.ndarray
    terminal_free: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    g: np.ndarray
    components: dict | None = None
    terminal_parts: np.ndarray | None = None
    terminal_impulses: np.ndarray | None = None


COMPONENTS = ("initial", "velocity", "neutral", "control", "drift", "noise", "jump", "velocity_jump")


class MildSolver:
    """Grid, kernel matrices and Picard iteration for one scenario."""

    def __init__(self, scn: ScenarioSpec, steps: int = 256, families: FractionalFamilies | None = None,
                 method: str = "auto", workers: int | None = None):
        self.scn = scn
        self.grid = TimeGrid(scn.b, steps, [imp.time for imp in scn.impulses])
        self.fam = families or FractionalFamilies(scn.r, scn.n_modes, method=method)
        if self.fam.n_modes != scn.n_modes or abs(self.fam.r - scn.r) > 0:
            raise GridMismatch("families do not match the scenario")
        self.workers = workers or default_workers()
        self._build()

    # grid-dependent tables
    def _build(self):
        scn, grid = self.scn, self.grid
        t = grid.times
        m = grid.n_nodes
        k = grid.n_intervals
        n = scn.n_modes
        self.history_times = grid.history_times(scn.a)
        self.path_times = np.concatenate([self.history_times[:-1], t])
        self._offset = self.history_times.size - 1

        # family values on every difference t_i - t_j (j <= i), rounded to merge equal lags
        diff = t[:, None] - t[None, :]
        scale = 1e12 / scn.b
        keys = np.round(np.maximum(diff, 0.0) * scale)
        uniq, inv = np.unique(keys, return_inverse=True)
        inv = inv.reshape(m, m)
        lags = uniq / scale
        c_tab = self.fam.c(lags)
        s_tab = self.fam.s(lags)
        p_tab = self.fam.p(lags)
        causal = np.tril(np.ones((m, k), bool), -1)  # interval j counts at node i iff j < i
        inv_k = inv[:, :k]
        dt = grid.dt
        self.WC = np.where(causal[None], np.moveaxis(c_tab[inv_k], -1, 0) * dt, 0.0)
        self.WP = np.where(causal[None], np.moveaxis(p_tab[inv_k], -1, 0) * dt, 0.0)
        self.WC_t = np.ascontiguousarray(np.swapaxes(self.WC, 1, 2))
        self.WP_t = np.ascontiguousarray(np.swapaxes(self.WP, 1, 2))
        self.R = np.where(causal, scn.varrho(np.maximum(diff[:, :k], 0.0)), 0.0)
        self.c_free = c_tab[inv[:, 0]]
        self.s_free = s_tab[inv[:, 0]]
        self.p_to_b = p_tab[inv[-1, :k]]  # p(b - t_j), (K, N)

        self.c_imp = np.zeros((len(scn.impulses), m, n))
        self.s_imp = np.zeros((len(scn.impulses), m, n))
        for p, (left, right) in enumerate(grid.impulse_nodes):
            self.c_imp[p, right:] = c_tab[inv[right:, right]]
            self.s_imp[p, right:] = s_tab[inv[right:, right]]

        self.delay = [self._interp(nu(t), f"nu{i + 1}", upper=t) for i, nu in enumerate((scn.nu1, scn.nu2, scn.nu3))]
        self.h_interp = None
        if scn.h_times:
            # nonlocal times lie in [0, b]: index the trajectory part of the path directly
            i0, i1, w1 = self._interp(np.asarray(scn.h_times, dtype=float), "h_times")
            self.h_interp = (i0 - self._offset, i1 - self._offset, w1)
        self.h_weights = np.asarray(scn.h_weights, dtype=float)
        self.phi_hist = scn.phi_values(self.history_times)
        self.phi0 = self.phi_hist[-1]
        self._bb = scn.control.bbstar
        # cross Gramians: the control term at node i is gamma[i] @ bracket
        self.gamma = np.einsum("nij,nm,jm->inm", self.WP, self._bb, self.p_to_b, optimize=True)

    def _interp(self, query, name, upper=None):
        """Index pairs and weights reading the history+trajectory path at ``query`` times.

        An exact hit on an impulse point returns the left value.
        """
        q = np.asarray(query, dtype=float).ravel()
        tol = 1e-12 * max(1.0, self.scn.b)
        if np.any(q < self.path_times[0] - tol):
            raise ValueError(f"{name} reaches before the history segment [-a, 0]")
        if upper is not None and np.any(q > upper + tol):
            raise ValueError(f"{name} must not exceed the current time")
        if np.any(q > self.scn.b + tol):
            raise ValueError(f"{name} exceeds the horizon")
        pt = self.path_times
        i1 = np.clip(np.searchsorted(pt, q - tol, side="left"), 0, pt.size - 1)
        exact = np.abs(pt[i1] - q) <= tol
        i0 = np.maximum(i1 - 1, 0)
        span = pt[i1] - pt[i0]
        with np.errstate(divide="ignore", invalid="ignore"):
            w1 = np.where(exact | (span <= 0), 1.0, (q - pt[i0]) / span)
        i0 = np.where(exact, i1, i0)
        return i0, i1, w1

    @staticmethod
    def _take(path, interp):
        i0, i1, w1 = interp
        return path[:, i0] * (1.0 - w1)[None, :, None] + path[:, i1] * w1[None, :, None]

    def _conv(self, kernel_t, values):
        """out[s, i, n] = sum_j kernel[n, i, j] values[s, j, n] over left nodes j.

        ``kernel_t`` is the kernel stored as (N, K, M) so one batched matmul
        over modes does the work on contiguous operands.
        """
        v = np.ascontiguousarray(np.moveaxis(values[:, :-1, :], 2, 0))
        return np.moveaxis(np.matmul(v, kernel_t), 0, 2)

    def initial_states(self, samples):
        z0 = self.c_free * self.phi0
        return np.broadcast_to(z0, (samples,) + z0.shape).copy()

    def evaluate(self, states, fractions, increments, u=None, g=None, components=False, terminal_parts=False):
        """Apply the mild-solution operator to ``states`` (S, M, N)."""
        scn = self.scn
        states = np.asarray(states, dtype=float)
        if states.ndim != 3 or states.shape[1:] != (self.grid.n_nodes, scn.n_modes):
            raise GridMismatch(f"states of shape {states.shape} do not fit the grid")
        s = states.shape[0]
        t = self.grid.times
        if self.h_interp is not None:
            hvec = np.einsum("i,sin->sn", self.h_weights, self._take(states, self.h_interp))
        else:
            hvec = np.zeros((s, scn.n_modes))
        history = self.phi_hist[None] + hvec[:, None, :]
        path = np.concatenate([history[:, :-1], states], axis=1)
        d1, d2, d3 = (self._take(path, itp) for itp in self.delay)
        f1 = np.asarray(scn.f1(t, states, d1), dtype=float)
        f2 = np.asarray(scn.f2(t, states, d2), dtype=float)
        if g is None:
            g = select(scn.G, SelectionStrategy(), t, states, d3, fractions)
        z = np.einsum("ij,sjn->sin", self.R, g[:, :-1, :] * increments, optimize=True)

        start = self.phi0 + hvec
        vel = scn.xi + f1[:, 0]
        initial = self.c_free[None] * start[:, None, :]
        velocity = self.s_free[None] * vel[:, None, :]
        push = f2 + z
        if u is not None:
            bu = scn.control.b_apply(u)
            push = push + bu
        out = initial + velocity - self._conv(self.WC_t, f1) + self._conv(self.WP_t, push)

        jumps = np.zeros((len(scn.impulses), s, scn.n_modes))
        djumps = np.zeros_like(jumps)
        for p, imp in enumerate(scn.impulses):
            left = self.grid.impulse_nodes[p][0]
            ctx = ImpulseContext(imp.time, self.path_times, path, self._offset + left, scn.a)
            jumps[p] = imp.jump(ctx)
            djumps[p] = imp.djump(ctx)
            out += self.c_imp[p][None] * jumps[p][:, None, :] + self.s_imp[p][None] * djumps[p][:, None, :]

        ev = Evaluation(out, history, initial[:, -1] + velocity[:, -1], f1, f2, g)
        if components:
            ev.components = {
                "initial": initial,
                "velocity": velocity,
                "neutral": -self._conv(self.WC_t, f1),
                "control": self._conv(self.WP_t, scn.control.b_apply(u)) if u is not None else np.zeros_like(out),
                "drift": self._conv(self.WP_t, f2),
                "noise": self._conv(self.WP_t, z),
                "jump": np.einsum("pmn,psn->smn", self.c_imp, jumps) if len(jumps) else np.zeros_like(out),
                "velocity_jump": np.einsum("pmn,psn->smn", self.s_imp, djumps) if len(jumps) else np.zeros_like(out),
            }
        if terminal_parts:
            # per-interval contributions to the terminal value (excluding control)
            ev.terminal_parts = (-self.WC[:, -1, :].T[None] * f1[:, :-1] + self.WP[:, -1, :].T[None] * (f2 + z)[:, :-1])
            ev.terminal_impulses = self.c_imp[:, -1][:, None] * jumps + self.s_imp[:, -1][:, None] * djumps
        return ev

    # -- ensembles ----------------------------------------------------------

    def _chunks(self, samples, seed, strat, offset=0):
        if samples < 1:
            raise ValueError("samples must be >= 1")
        idx = np.arange(offset, offset + samples)
        shape = (self.grid.n_nodes, self.scn.n_modes)
        chunks = []
        for start in range(0, samples, CHUNK):
            ids = idx[start : start + CHUNK]
            inc = ensemble_increments(self.scn.noise, self.grid, seed, ids)
            frac = np.stack([strat.fractions(shape, stream=int(i)) for i in ids])
            chunks.append(_Chunk(ids, inc, frac, self.initial_states(ids.size)))
        return chunks

    def _map(self, fn, items):
        if self.workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(self.workers) as ex:
                return list(ex.map(fn, items))
        return [fn(c) for c in items]

    def iterate(self, sweep, samples, seed, strat, tol, max_iter, offset=0, raise_on_failure=True):
        """Generic Picard loop; ``sweep(chunk)`` returns (new states, extra)."""
        if not tol > 0:
            raise ValueError("tol must be positive")
        chunks = self._chunks(samples, seed, strat, offset)
        gaps = []
        converged = False
        extras = None
        for _ in range(max_iter):
            results = self._map(sweep, chunks)
            total = np.zeros(self.grid.n_nodes)
            for ch, (new, _extra) in zip(chunks, results):
                total += np.sum((new - ch.states) ** 2, axis=(0, 2))
            gap = float(np.max(total) / samples)
            gaps.append(gap)
            for ch, (new, _extra) in zip(chunks, results):
                ch.states = new
            extras = [extra for _new, extra in results]
            if gap <= tol:
                converged = True
                break
        report = PicardReport(
            iterations=len(gaps) - 1 if converged else len(gaps),
            final_gap=gaps[-1],
            converged=converged,
            empirical_rate=_rate(gaps),
            gaps=tuple(gaps),
        )
        states = np.concatenate([ch.states for ch in chunks])
        histories = np.concatenate([e.history for e in extras]) if extras and hasattr(extras[0], "history") else None
        if histories is None:
            histories = np.broadcast_to(self.phi_hist, (samples,) + self.phi_hist.shape).copy()
        traj = Trajectory(self.grid, states, self.history_times, histories, np.concatenate([c.indices for c in chunks]))
        traj.extras = extras
        traj.chunks = chunks
        if not converged and raise_on_failure:
            raise NotConverged(f"Picard iteration stopped after {max_iter} sweeps with gap {gaps[-1]:.3e}",
                               report, traj)
        return traj, report

    def picard_solve(self, u=None, strat: SelectionStrategy = SelectionStrategy(), tol: float = 1e-12,
                     max_iter: int = 50, samples: int = 1, seed: int = 0, offset: int = 0,
                     raise_on_failure: bool = True):
        """Fixed point of the mild-solution operator for a fixed control path ``u``.

        ``u`` is None, a (M, channels) path shared by all samples or an
        (S, M, channels) array aligned with the samples.
        """
        def sweep(ch):
            uu = None
            if u is not None:
                uu = np.asarray(u, dtype=float)
                uu = uu[None] if uu.ndim == 2 else uu[ch.indices - offset]
                uu = np.broadcast_to(uu, (ch.indices.size,) + uu.shape[1:])
            ev = self.evaluate(ch.states, ch.fractions, ch.increments, u=uu)
            return ev.states, ev

        return self.iterate(sweep, samples, seed, strat, tol, max_iter, offset, raise_on_failure)

    def impulse_apply(self, traj: Trajectory, p: int):
        """(left value, right value, jump) at impulse p for every sample."""
        if not self.grid.same_as(traj.grid):
            raise GridMismatch("trajectory grid differs from the solver grid")
        left, right = traj.impulse_values(p)
        return left, right, right - left


def rhs_eval(solver: MildSolver, traj: Trajectory | np.ndarray, u=None, g=None, increments=None,
             fractions=None, components=False):
    """One application of the mild-solution operator.

    ``g`` gives the selection values (S, M, N) directly; otherwise the
    midpoint (or ``fractions``) selection of the current iterate is used.
    Missing increments mean a noise-free evaluation.
    """
    states = traj.states if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    if states.ndim == 2:
        states = states[None]
    s = states.shape[0]
    shape = (s, solver.grid.n_intervals, solver.scn.n_modes)
    inc = np.zeros(shape) if increments is None else np.broadcast_to(increments, shape)
    frac = np.full(states.shape, 0.5) if fractions is None else np.broadcast_to(fractions, states.shape)
    if u is not None:
        u = np.asarray(u, dtype=float)
        if u.ndim == 2:
            u = np.broadcast_to(u, (s,) + u.shape)
    ev = solver.evaluate(states, frac, inc, u=u, g=g, components=components)
    out = Trajectory(solver.grid, ev.states, solver.history_times, ev.history)
    return (out, ev.components) if components else out


def picard_solve(solver: MildSolver, u=None, strat: SelectionStrategy = SelectionStrategy(), tol: float = 1e-12,
                 max_iter: int = 50, samples: int = 1, seed: int = 0):
    return solver.picard_solve(u=u, strat=strat, tol=tol, max_iter=max_iter, samples=samples, seed=seed)


def impulse_apply(solver: MildSolver, traj: Trajectory, p: int):
    return solver.impulse_apply(traj, p)


def deterministic_terminal(scn: ScenarioSpec, steps: int, tol: float = 1e-13, max_iter: int = 100):
    """Noise-free terminal value zeta(b) with the midpoint selection."""
    solver = MildSolver(scn.with_(noise=QWienerSpec.zero(scn.n_modes)), steps)
    traj, _ = solver.picard_solve(tol=tol, max_iter=max_iter)
    return traj.terminal()[0]


def refinement_ratio(scn: ScenarioSpec, steps=(128, 256, 512)):
    """Terminal values, successive differences and their ratios under grid refinement.

    For a first-order scheme with halving steps the ratios approach 1/2.
    """
    values = [deterministic_terminal(scn, s) for s in steps]
    diffs = [float(np.linalg.norm(values[i + 1] - values[i])) for i in range(len(values) - 1)]
    ratios = [diffs[i + 1] / diffs[i] if diffs[i] > 0 else math.nan for i in range(len(diffs) - 1)]
    return values, diffs, ratios
