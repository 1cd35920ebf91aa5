"""Interval-valued diffusion maps, Hausdorff distances and selections.

A multivalued diffusion coefficient is modelled per mode as a closed
interval [lower, upper] that depends on (x, zeta(x), zeta(nu_3(x))).
A selection picks the point lower + f (upper - lower) with a fraction f in
[0, 1] fixed by the strategy; because f does not depend on the state, the
selection inherits the Lipschitz constant of the interval endpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import EmptyInterval, InvalidInterval

STRATEGIES = ("lower", "upper", "midpoint", "random")


def _check_interval(iv, name):
    lo, hi = float(iv[0]), float(iv[1])
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise InvalidInterval(f"{name} = [{lo}, {hi}] is not a closed interval")
    return lo, hi


def hausdorff_interval(i1, i2) -> float:
    """Hausdorff distance between closed intervals [a1, b1] and [a2, b2]."""
    a1, b1 = _check_interval(i1, "first interval")
    a2, b2 = _check_interval(i2, "second interval")
    return max(abs(a1 - a2), abs(b1 - b2))


def hausdorff_box(lo1, hi1, lo2, hi2, weights=None):
    """Hausdorff distance between boxes prod_n [lo_n, hi_n] in a weighted l2 norm.

    For boxes the sup over one set of the distance to the other separates by
    coordinate, giving sqrt(sum_n w_n e_n^2) for each one-sided excess e_n.
    Leading axes broadcast.
    """
    lo1, hi1, lo2, hi2 = (np.asarray(v, dtype=float) for v in (lo1, hi1, lo2, hi2))
    if np.any(lo1 > hi1) or np.any(lo2 > hi2):
        raise InvalidInterval("box with lower > upper")
    w = 1.0 if weights is None else np.asarray(weights, dtype=float)
    # sup_{a in A} d(a, B) per coordinate is max(0, lo2 - lo1, hi1 - hi2)
    ab = np.maximum(0.0, np.maximum(lo2 - lo1, hi1 - hi2))
    ba = np.maximum(0.0, np.maximum(lo1 - lo2, hi2 - hi1))
    return np.maximum(np.sqrt(np.sum(w * ab**2, axis=-1)), np.sqrt(np.sum(w * ba**2, axis=-1)))


@dataclass(frozen=True)
class IntervalMap:
    """Per-mode interval bounds; both callables take (x, z_now, z_delayed).

    ``x`` has shape (M,), the states (..., M, N); results are (..., M, N).
    """

    lower: Callable
    upper: Callable
    name: str = "custom"

    def bounds(self, x, z_now, z_delayed):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo = np.asarray(self.lower(x, z_now, z_delayed), dtype=float)
        hi = np.asarray(self.upper(x, z_now, z_delayed), dtype=float)
        shape = np.broadcast_shapes(lo.shape, hi.shape, np.shape(z_now))
        return np.broadcast_to(lo, shape), np.broadcast_to(hi, shape)

    @classmethod
    def zero(cls):
        return cls(_zero_like, _zero_like, name="zero")

    @classmethod
    def singleton(cls, fn, name="singleton"):
        return cls(fn, fn, name=name)

    @classmethod
    def linear_singleton(cls, gain):
        """lower = upper = gain * z_now."""
        return cls.singleton(lambda x, z, zd: gain * np.asarray(z), name="linear")

    @classmethod
    def constant(cls, lower, upper):
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        return cls(lambda x, z, zd: np.broadcast_to(lo, np.shape(z)),
                   lambda x, z, zd: np.broadcast_to(hi, np.shape(z)), name="constant")

    @classmethod
    def relative_band(cls, scale, width=1.0):
        """Per mode [s_n (1 - w_n), s_n (1 + w_n)] with w_n = width |z_n| / (1 + |z_n| + |zd_n|).

        The band centre ``scale`` (s_n >= 0) is fixed; the half-width grows
        with the state but stays below ``width * s_n``.
        """
        s = np.asarray(scale, dtype=float)
        if np.any(s < 0):
            raise ValueError("band scale must be non-negative")

        def half(z, zd):
            z, zd = np.abs(np.asarray(z)), np.abs(np.asarray(zd))
            return width * s * z / (1.0 + z + zd)

        return cls(lambda x, z, zd: s - half(z, zd), lambda x, z, zd: s + half(z, zd), name="relative_band")


def _zero_like(x, z, zd):
    return np.zeros(np.shape(z))


@dataclass(frozen=True)
class SelectionStrategy:
    kind: str = "midpoint"
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown selection strategy {self.kind!r}; expected one of {STRATEGIES}")
        if self.kind == "random":
            if self.seed is None or int(self.seed) < 0:
                raise ValueError("random selection needs a non-negative seed")

    @classmethod
    def parse(cls, text, seed=None):
        """'midpoint', 'random' or 'random(7)'."""
        text = text.strip()
        if text.startswith("random(") and text.endswith(")"):
            return cls("random", int(text[7:-1]))
        return cls(text, seed if text == "random" else None)

    def label(self):
        return f"random({self.seed})" if self.kind == "random" else self.kind

    def fractions(self, shape, stream: int = 0):
        """Position inside each interval: 0 = lower end, 1 = upper end.

        A random strategy draws from its own generator keyed by (seed,
        stream), so a trajectory index used as ``stream`` fixes the field.
        """
        if self.kind == "lower":
            return np.zeros(shape)
        if self.kind == "upper":
            return np.ones(shape)
        if self.kind == "midpoint":
            return np.full(shape, 0.5)
        rng = np.random.default_rng(np.random.SeedSequence([int(self.seed), int(stream)]))
        return rng.random(shape)


def select(imap: IntervalMap, strat: SelectionStrategy, x, z_now, z_delayed, fractions=None):
    """A point of G(x, z_now, z_delayed) chosen by ``strat``."""
    lo, hi = imap.bounds(x, z_now, z_delayed)
    if np.any(lo > hi):
        raise EmptyInterval(f"interval map {imap.name!r} has lower > upper at {int(np.sum(lo > hi))} entries")
    f = strat.fractions(lo.shape) if fractions is None else fractions
    return lo + f * (hi - lo)


@dataclass(frozen=True)
class SelectionGapReport:
    ratio: float
    bound: float
    passed: bool

    def as_dict(self):
        return {"ratio": self.ratio, "bound": self.bound, "passed": self.passed}


def lipschitz_selection_gap(imap: IntervalMap, z1, z2, times, strat: SelectionStrategy = SelectionStrategy(),
                            delayed=None, variances=None, w_hat_integral=math.inf, rtol=1e-9):
    """sup_x int_0^x ||g1 - g2||^2 / sup ||z1 - z2||^2 for selections of the same strategy.

    ``z1``, ``z2`` are (M, N) paths on ``times``; ``delayed`` optionally gives
    the (M, N) delayed values of each path (default: the paths themselves).
    ``variances`` weight the modes (the L_2^0 norm of a diagonal noise
    coefficient).  Integrals use the left-point rule.
    """
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    d1, d2 = (z1, z2) if delayed is None else (np.asarray(delayed[0]), np.asarray(delayed[1]))
    times = np.asarray(times, dtype=float)
    q = np.ones(z1.shape[-1]) if variances is None else np.asarray(variances, dtype=float)
    f = strat.fractions(z1.shape)
    g1 = select(imap, strat, times, z1, d1, f)
    g2 = select(imap, strat, times, z2, d2, f)
    inc = np.sum((g1 - g2)[:-1] ** 2 * q, axis=-1) * np.diff(times)
    num = float(np.max(np.concatenate([[0.0], np.cumsum(inc)])))
    den = float(max(np.max(np.sum((z1 - z2) ** 2, axis=-1)), np.max(np.sum((d1 - d2) ** 2, axis=-1))))
    if den == 0.0:
        ratio = 0.0
    else:
        ratio = num / den
    return SelectionGapReport(ratio, float(w_hat_integral), bool(ratio <= w_hat_integral * (1 + rtol)))


@dataclass(frozen=True)
class GrowthData:
    """Weights and bounds of the growth and Lipschitz hypotheses.

    ``wp``, ``w_hat`` and ``theta`` are weights on [0, b]; ``beta`` and
    ``pounds`` are nondecreasing functions on [0, inf); ``ell`` bounds the
    squared memory kernel.  Weights may be constants or callables.
    """

    w_hat: float | Callable = 0.0
    wp: float | Callable = 0.0
    beta: Callable = field(default=lambda s: 1.0 + s)
    theta: float | Callable = 0.0
    pounds: Callable = field(default=lambda s: 1.0 + s)
    ell: float = 0.0

    def __post_init__(self):
        if self.ell < 0:
            raise ValueError("ell must be >= 0")
        grid = np.linspace(0.0, 100.0, 201)
        for name in ("beta", "pounds"):
            vals = np.asarray([getattr(self, name)(s) for s in grid], dtype=float)
            if np.any(vals <= 0) or np.any(np.diff(vals) < -1e-12):
                raise ValueError(f"{name} must be positive and nondecreasing")

    @staticmethod
    def _eval(w, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(w(x) if callable(w) else w, dtype=float), x.shape)

    def w_hat_at(self, x):
        return self._eval(self.w_hat, x)

    def integral(self, name, b, n=2049):
        x = np.linspace(0.0, b, n)
        return float(np.trapezoid(self._eval(getattr(self, name), x), x))


@dataclass(frozen=True)
class HypothesisCheck:
    name: str
    passed: bool
    worst_ratio: float
    detail: str = ""

    def as_dict(self):
        return {"name": self.name, "passed": self.passed, "worst_ratio": self.worst_ratio, "detail": self.detail}


def _ratio(lhs, rhs):
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(rhs > 0, lhs / rhs, np.where(lhs > 1e-300, np.inf, 0.0))
    return float(np.max(r)) if r.size else 0.0


def estimate_lipschitz(fn, x, n_modes, samples=200, seed=0, scale=2.0):
    """Worst observed ||fn(x,z,zd) - fn(x,z',zd')||^2 / (||z-z'||^2 + ||zd-zd'||^2)."""
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    shape = (samples, x.size, n_modes)
    z1, z2, d1, d2 = (scale * rng.standard_normal(shape) for _ in range(4))
    # include nearby pairs, where smooth maps attain their local slope
    near = rng.random((samples, 1, 1)) < 0.5
    z2 = np.where(near, z1 + 1e-3 * rng.standard_normal(shape), z2)
    d2 = np.where(near, d1 + 1e-3 * rng.standard_normal(shape), d2)
    num = np.sum((fn(x, z1, d1) - fn(x, z2, d2)) ** 2, axis=-1)
    den = np.sum((z1 - z2) ** 2, axis=-1) + np.sum((d1 - d2) ** 2, axis=-1)
    return _ratio(num, den)


def hypothesis_audit(scenario, samples: int = 200, seed: int = 0, scale: float = 2.0):
    """Numerical check of the configured growth and Lipschitz constants.

    Random states are drawn at every grid time of ``scenario``.  Each check
    reports the worst ratio observed value / allowed value (pass iff <= 1).
    ``scenario`` needs attributes b, n_modes, f1, f2, G, h_weights,
    impulses, noise, varrho and constants (see the mild solver).
    """
    rng = np.random.default_rng(seed)
    c = scenario.constants
    n = scenario.n_modes
    x = np.linspace(0.0, scenario.b, 33)
    shape = (samples, x.size, n)
    z1, z2, d1, d2 = (scale * rng.standard_normal(shape) for _ in range(4))
    near = rng.random((samples, 1, 1)) < 0.5
    z2 = np.where(near, z1 + 1e-3 * rng.standard_normal(shape), z2)
    d2 = np.where(near, d1 + 1e-3 * rng.standard_normal(shape), d2)
    dz = np.sum((z1 - z2) ** 2, axis=-1) + np.sum((d1 - d2) ** 2, axis=-1)
    size1 = 1.0 + np.sum(z1**2, axis=-1) + np.sum(d1**2, axis=-1)
    checks = []

    def add(name, lhs, rhs, detail=""):
        r = _ratio(lhs, rhs)
        checks.append(HypothesisCheck(name, bool(r <= 1.0 + 1e-9), r, detail))

    f1a, f1b = scenario.f1(x, z1, d1), scenario.f1(x, z2, d2)
    add("f1 lipschitz", np.sum((f1a - f1b) ** 2, axis=-1), c.L_f1 * dz, f"L_f1={c.L_f1}")
    add("f1 growth", np.sum(f1a**2, axis=-1), c.k1 * size1, f"k1={c.k1}")
    f2a, f2b = scenario.f2(x, z1, d1), scenario.f2(x, z2, d2)
    add("f2 lipschitz", np.sum((f2a - f2b) ** 2, axis=-1), c.L_f2 * dz, f"L_f2={c.L_f2}")
    add("f2 growth", np.sum(f2a**2, axis=-1), c.k2 * size1, f"k2={c.k2}")
    theta = c.growth._eval(c.growth.theta, x)
    pounds = np.vectorize(c.growth.pounds)(size1 - 1.0)
    add("f2 weighted growth", np.sum(f2a**2, axis=-1), theta * pounds,
        "||f2||^2 <= theta(x) pounds(||z||^2 + ||zd||^2)")

    # nonlocal h(z) = sum_i c_i z(tau_i): ||h(z1) - h(z2)||^2 <= (sum |c_i|)^2 sup ||z1 - z2||^2
    hw = np.asarray(scenario.h_weights, dtype=float)
    idx = rng.integers(0, x.size, size=hw.size)
    dh = np.einsum("i,sin->sn", hw, (z1 - z2)[:, idx])
    sup = np.max(np.sum((z1 - z2) ** 2, axis=-1), axis=1)
    add("h lipschitz", np.sum(dh**2, axis=-1), c.L_h * sup, f"L_h={c.L_h}")

    for p, imp in enumerate(scenario.impulses):
        add(f"impulse {p + 1} jump lipschitz", np.full(1, imp.jump.lipschitz(scenario.a, imp.time)),
            np.full(1, c.L_I[p]), f"L_I={c.L_I[p]}")
        add(f"impulse {p + 1} derivative-jump lipschitz", np.full(1, imp.djump.lipschitz(scenario.a, imp.time)),
            np.full(1, c.L_J[p]), f"L_J={c.L_J[p]}")

    q = scenario.noise.variances
    ga = select(scenario.G, SelectionStrategy("lower"), x, z1, d1)
    gb = select(scenario.G, SelectionStrategy("upper"), x, z1, d1)
    lo1, hi1 = scenario.G.bounds(x, z1, d1)
    lo2, hi2 = scenario.G.bounds(x, z2, d2)
    hd2 = hausdorff_box(lo1, hi1, lo2, hi2, q) ** 2
    w_hat = c.growth.w_hat_at(x)
    add("G lipschitz (Hausdorff)", hd2, w_hat * dz, "H_d^2 <= w_hat (||dz||^2 + ||dzd||^2)")
    zero = np.zeros((1, x.size, n))
    lo0, hi0 = scenario.G.bounds(x, zero, zero)
    # distance from 0 to a box: per mode max(0, lower, -upper)
    dist0 = np.sqrt(np.sum(q * np.maximum(0.0, np.maximum(lo0, -hi0)) ** 2, axis=-1))
    add("G at zero", dist0[0], w_hat, "d(0, G(x,0,0)) <= w_hat(x)")
    sel_sq = np.maximum(np.sum(ga**2 * q, axis=-1), np.sum(gb**2 * q, axis=-1))
    wp = c.growth._eval(c.growth.wp, x)
    beta = np.vectorize(c.growth.beta)(np.sum(z1**2, axis=-1) + np.sum(d1**2, axis=-1))
    add("G growth", sel_sq, wp * beta, "||g||^2 <= wp(x) beta(||z||^2 + ||zd||^2)")
    tt = np.linspace(0.0, scenario.b, 257)
    add("kernel bound", np.asarray(scenario.varrho(tt)) ** 2, np.full(tt.size, c.growth.ell), f"ell={c.growth.ell}")
    return checks
