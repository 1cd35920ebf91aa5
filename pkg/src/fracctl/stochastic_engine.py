"""Q-Wiener noise on the spectral basis, Ito sums and Monte Carlo moments.

Everything is diagonal in the eigenbasis: Q e_n = q_n e_n, so the increment
of mode n over a step of length dt is Normal(0, q_n dt), independent across
modes and steps.  Sample paths are indexed by (seed, index) so that any
subset of an ensemble can be regenerated bit for bit on any worker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AdaptednessViolation, GridMismatch

# two nodes closer than this (relative to b) are treated as the same time
_NODE_TOL = 1e-12


@dataclass(frozen=True)
class QWienerSpec:
    variances: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.variances, dtype=float).ravel()
        if q.size == 0:
            raise ValueError("need at least one mode")
        if np.any(~np.isfinite(q)) or np.any(q < 0):
            raise ValueError("covariance eigenvalues must be finite and >= 0")
        q.setflags(write=False)
        object.__setattr__(self, "variances", q)

    @classmethod
    def power_law(cls, n_modes, scale=1.0, exponent=2.0):
        """q_n = scale * n^(-exponent)."""
        n = np.arange(1, n_modes + 1, dtype=float)
        return cls(scale * n**-exponent)

    @classmethod
    def zero(cls, n_modes):
        return cls(np.zeros(n_modes))

    @property
    def n_modes(self):
        return self.variances.size

    @property
    def trace(self):
        return float(self.variances.sum())


class TimeGrid:
    """Uniform grid on [0, b] with every impulse point stored twice.

    At an impulse point the first copy holds the left limit (which is the
    value, since paths are left continuous) and the second the right limit.
    The interval between the two copies has length zero.
    """

    def __init__(self, b: float, steps: int, impulse_points=()):
        if not b > 0:
            raise ValueError("horizon b must be positive")
        if int(steps) < 1:
            raise ValueError("steps must be a positive integer")
        self.b = float(b)
        self.steps = int(steps)
        pts = [float(x) for x in impulse_points]
        if any(not 0.0 < x < self.b for x in pts):
            raise ValueError("impulse points must lie strictly inside (0, b)")
        if any(x2 <= x1 for x1, x2 in zip(pts, pts[1:])):
            raise ValueError("impulse points must be strictly increasing")
        self.impulse_points = tuple(pts)

        uniform = np.linspace(0.0, self.b, self.steps + 1)
        tol = _NODE_TOL * self.b
        keep = np.ones(uniform.size, bool)
        for x in pts:
            keep &= np.abs(uniform - x) > tol
        times = list(uniform[keep])
        post = [False] * len(times)
        for x in pts:
            times += [x, x]
            post += [False, True]
        order = np.lexsort((np.asarray(post), np.asarray(times)))
        self.times = np.asarray(times)[order]
        self.is_post = np.asarray(post)[order]
        self.dt = np.diff(self.times)
        # (left node, right node) of each impulse
        self.impulse_nodes = tuple(
            (int(i), int(i) + 1) for i in np.flatnonzero(np.diff(self.times) == 0.0)
        )

    @property
    def n_nodes(self):
        return self.times.size

    @property
    def n_intervals(self):
        return self.dt.size

    @property
    def h(self):
        return self.b / self.steps

    def history_times(self, a: float):
        """Grid on [-a, 0] with spacing close to the uniform step."""
        if a < 0:
            raise ValueError("history depth must be >= 0")
        if a == 0:
            return np.zeros(1)
        m = max(1, int(math.ceil(a / self.h - 1e-9)))
        return np.linspace(-a, 0.0, m + 1)

    def same_as(self, other):
        return (
            isinstance(other, TimeGrid)
            and self.times.shape == other.times.shape
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.is_post, other.is_post)
        )

    def __repr__(self):
        return f"TimeGrid(b={self.b}, steps={self.steps}, impulse_points={self.impulse_points})"


@dataclass
class Trajectory:
    """An ensemble of paths on a grid.

    ``states`` has shape (samples, nodes, modes) and ``history`` has shape
    (samples, history nodes, modes) on ``history_times``.
    """

    grid: TimeGrid
    states: np.ndarray
    history_times: np.ndarray
    history: np.ndarray
    sample_indices: np.ndarray = field(default=None)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim == 2:
            self.states = self.states[None]
        if self.states.shape[1] != self.grid.n_nodes:
            raise GridMismatch(f"states have {self.states.shape[1]} nodes, grid has {self.grid.n_nodes}")
        self.history = np.asarray(self.history, dtype=float)
        if self.history.ndim == 2:
            self.history = self.history[None]
        if self.sample_indices is None:
            self.sample_indices = np.arange(self.states.shape[0])

    @property
    def samples(self):
        return self.states.shape[0]

    @property
    def n_modes(self):
        return self.states.shape[2]

    def terminal(self):
        return self.states[:, -1, :]

    def at(self, t):
        """Left-continuous value at time t, shape (samples, modes)."""
        i = int(np.searchsorted(self.grid.times, t, side="left"))
        if i >= self.grid.n_nodes or abs(self.grid.times[i] - t) > _NODE_TOL * self.grid.b:
            raise GridMismatch(f"time {t} is not a grid node")
        return self.states[:, i, :]

    def impulse_values(self, p):
        """(left, right) values at impulse p."""
        left, right = self.grid.impulse_nodes[p]
        return self.states[:, left, :], self.states[:, right, :]

    def sup_norm_sq(self):
        """Per-sample sup over nodes of ||zeta(x)||^2."""
        return np.max(np.sum(self.states**2, axis=2), axis=1)


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    std_error: float
    samples: int
    seed: int

    @classmethod
    def from_samples(cls, values, seed):
        v = np.asarray(values, dtype=float).ravel()
        if v.size == 0:
            raise ValueError("no samples")
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
        return cls(float(v.mean()), se, int(v.size), int(seed))

    @property
    def rel_std_error(self):
        return self.std_error / abs(self.mean) if self.mean != 0 else 0.0

    def as_dict(self):
        return {"mean": self.mean, "std_error": self.std_error, "samples": self.samples, "seed": self.seed}


@dataclass
class RunningMoments:
    """Mergeable count/sum/sum-of-squares accumulator."""

    count: int = 0
    total: float = 0.0
    total_sq: float = 0.0

    def add(self, values):
        v = np.asarray(values, dtype=float).ravel()
        self.count += v.size
        self.total += float(v.sum())
        self.total_sq += float((v * v).sum())
        return self

    def merge(self, other):
        return RunningMoments(self.count + other.count, self.total + other.total, self.total_sq + other.total_sq)

    def estimate(self, seed):
        n = self.count
        mean = self.total / n
        var = max(0.0, (self.total_sq - n * mean * mean) / (n - 1)) if n > 1 else 0.0
        return MonteCarloEstimate(mean, math.sqrt(var / n), n, seed)


def _generator(seed, index):
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def wiener_increments(spec: QWienerSpec, grid: TimeGrid, seed: int, index: int = 0):
    """Increments for path ``index``, shape (intervals, modes).

    A standard normal is drawn for every interval, including the zero-length
    ones at impulse points, so the draw layout depends only on the grid size.
    """
    z = _generator(seed, index).standard_normal((grid.n_intervals, spec.n_modes))
    return z * np.sqrt(np.multiply.outer(grid.dt, spec.variances))


def ensemble_increments(spec: QWienerSpec, grid: TimeGrid, seed: int, indices):
    """Stacked increments, shape (len(indices), intervals, modes)."""
    indices = np.atleast_1d(indices)
    out = np.empty((indices.size, grid.n_intervals, spec.n_modes))
    for s, idx in enumerate(indices):
        out[s] = wiener_increments(spec, grid, seed, int(idx))
    return out


class AdaptedPath:
    """Read-only view of the Wiener path W(t_j) that refuses to look ahead of ``node``."""

    def __init__(self, cumulative, node):
        self._w = cumulative
        self.node = node

    def __getitem__(self, j):
        if j < 0 or j > self.node:
            raise AdaptednessViolation(f"integrand at node {self.node} requested W at node {j}")
        return self._w[..., j, :]


def _cumulative(increments):
    inc = np.asarray(increments, dtype=float)
    zeros = np.zeros(inc.shape[:-2] + (1, inc.shape[-1]))
    return np.concatenate([zeros, np.cumsum(inc, axis=-2)], axis=-2)


def _trim_nodes(chi, grid, full):
    """Drop the value at the final node if the integrand was given per node."""
    axis = chi.ndim - (3 if full else 2)
    if chi.shape[axis] == grid.n_nodes:
        chi = np.take(chi, np.arange(grid.n_intervals), axis=axis)
    if chi.shape[axis] != grid.n_intervals:
        raise GridMismatch(f"integrand has {chi.shape[axis]} steps, grid has {grid.n_intervals}")
    return chi


def _apply(chi, dw, full):
    return np.einsum("...ij,...j->...i", chi, dw) if full else chi * dw


def ito_integral(integrand, grid: TimeGrid, increments, full: bool = False):
    """Left-point sum of ``integrand(t_k) dw_k`` over all intervals.

    ``integrand`` is an array with a step axis (per interval or per node;
    a trailing node is ignored) or a callable ``chi(k, t_k, past)`` where
    ``past[j]`` returns W(t_j) for j <= k only.  Values are per-mode
    multipliers, or (modes, modes) matrices when ``full`` is set.
    ``increments`` has shape (intervals, modes) or (samples, intervals, modes).
    """
    inc = np.asarray(increments, dtype=float)
    if inc.shape[-2] != grid.n_intervals:
        raise GridMismatch(f"increments have {inc.shape[-2]} steps, grid has {grid.n_intervals}")
    if callable(integrand):
        w = _cumulative(inc)
        total = np.zeros(inc.shape[:-2] + (inc.shape[-1],))
        for k in range(grid.n_intervals):
            chi = np.asarray(integrand(k, grid.times[k], AdaptedPath(w, k)), dtype=float)
            total = total + _apply(chi, inc[..., k, :], full)
        return total
    chi = _trim_nodes(np.asarray(integrand, dtype=float), grid, full)
    return np.sum(_apply(chi, inc, full), axis=-2)


def l20_norm_sq(chi, variances, full=False):
    """||chi||^2 in L_2^0: sum_ij chi_ij^2 q_j (per-mode chi: sum_i chi_i^2 q_i)."""
    chi = np.asarray(chi, dtype=float)
    q = np.asarray(variances, dtype=float)
    return np.sum(chi**2 * q, axis=(-2, -1)) if full else np.sum(chi**2 * q, axis=-1)


@dataclass(frozen=True)
class MomentBoundReport:
    lhs: MonteCarloEstimate
    rhs: float
    constant: float
    passed: bool
    gap_in_std_errors: float

    def as_dict(self):
        return {
            "lhs": self.lhs.as_dict(),
            "rhs": self.rhs,
            "constant": self.constant,
            "passed": self.passed,
            "gap_in_std_errors": self.gap_in_std_errors,
        }


def moment_bound_check(chi, grid: TimeGrid, spec: QWienerSpec, samples: int, seed: int = 0,
                       constant: float = 1.0, full: bool = False, batch: int = 1000):
    """Second-moment bound E||int chi dw||^2 <= C int E||chi||^2_{L_2^0}.

    For array (deterministic) integrands the right side is exact; for
    callable integrands it is estimated on the same paths.  The check passes
    when lhs <= rhs (1 + 3 relative std error of lhs).
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    lhs_acc = RunningMoments()
    rhs_acc = RunningMoments()
    deterministic = not callable(chi)
    if deterministic:
        arr = _trim_nodes(np.asarray(chi, dtype=float), grid, full)
        rhs = float(np.sum(l20_norm_sq(arr, spec.variances, full) * grid.dt))
    for start in range(0, samples, batch):
        idx = np.arange(start, min(samples, start + batch))
        inc = ensemble_increments(spec, grid, seed, idx)
        if deterministic:
            val = ito_integral(arr, grid, inc, full)
        else:
            w = _cumulative(inc)
            val = np.zeros((idx.size, spec.n_modes))
            energy = np.zeros(idx.size)
            for k in range(grid.n_intervals):
                c = np.asarray(chi(k, grid.times[k], AdaptedPath(w, k)), dtype=float)
                val = val + _apply(c, inc[:, k, :], full)
                energy = energy + np.broadcast_to(l20_norm_sq(c, spec.variances, full), (idx.size,)) * grid.dt[k]
            rhs_acc.add(energy)
        lhs_acc.add(np.sum(val**2, axis=-1))
    lhs = lhs_acc.estimate(seed)
    if not deterministic:
        rhs = rhs_acc.estimate(seed).mean
    rhs *= constant
    passed = lhs.mean <= rhs * (1.0 + 3.0 * lhs.rel_std_error) or (lhs.mean == 0.0 and rhs == 0.0)
    gap = abs(lhs.mean - rhs) / lhs.std_error if lhs.std_error > 0 else (0.0 if lhs.mean == rhs else math.inf)
    return MomentBoundReport(lhs, float(rhs), float(constant), bool(passed), float(gap))


def stochastic_convolution(kernel, g, increments):
    """Z(t_i) = sum_{j: t_{j+1} <= t_i} kernel[i, j] g_j dw_j.

    ``kernel`` is (nodes, intervals) and already zero outside the causal
    range; ``g`` is (samples, nodes, modes) selection values (only the left
    node of each interval is used); ``increments`` is (samples, intervals, modes).
    The inner sum is shared by all outer nodes, so the cost is one matmul.
    """
    x = g[:, :-1, :] * increments
    return np.einsum("ij,sjn->sin", kernel, x, optimize=True)
