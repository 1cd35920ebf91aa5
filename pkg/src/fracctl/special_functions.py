r"""Mainardi/Wright function, Mittag-Leffler series and subordination quadrature.

The Mainardi function of index :math:`0<\rho<1`,

.. math::

    M_\rho(z) = \sum_{n\ge 0} \frac{(-z)^n}{n!\,\Gamma(1-\rho-\rho n)}
              = \frac{1}{\pi}\sum_{n\ge 0} \frac{(-z)^n}{n!}
                \Gamma(\rho(n+1))\sin(\pi\rho(n+1)),

is a probability density on :math:`z\ge 0`.  The second form is the
reflection of the reciprocal gamma factor; it makes the pole convention
(terms at poles vanish) exact and lets the terms be bounded in log space.

The plain series cancels catastrophically once :math:`z` grows, so
:func:`mainardi` switches to Kanter's positive integral representation of the
one-sided stable law,

.. math::

    M_\rho(z) = \frac{1}{\pi(1-\rho) z}\int_0^\pi u\,e^{-u}\,d\phi,\qquad
    u = A(\phi)\, z^{1/(1-\rho)},

    A(\phi) = \frac{\sin(\rho\phi)^{\rho/(1-\rho)}\sin((1-\rho)\phi)}
                   {\sin(\phi)^{1/(1-\rho)}},

which has no cancellation at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gammaln, roots_legendre

from .errors import NonConvergent

EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SeriesControl:
    """Truncation and quadrature resolution shared by the evaluators."""

    max_terms: int = 256
    abs_tol: float = 1e-10
    quad_nodes: int = 64

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise ValueError(f"abs_tol must be > 0, got {self.abs_tol}")
        if self.max_terms < 8:
            raise ValueError(f"max_terms must be >= 8, got {self.max_terms}")
        if self.quad_nodes < 1:
            raise ValueError(f"quad_nodes must be >= 1, got {self.quad_nodes}")

    @property
    def max_peak(self) -> float:
        # largest admissible term magnitude before rounding exceeds abs_tol;
        # log-space terms carry ~64 eps relative error each
        return 0.1 * self.abs_tol / (64 * EPS)


DEFAULT_CONTROL = SeriesControl()


@dataclass(frozen=True)
class SubordinationParams:
    """Index pair for subordination; ``r = alpha / 2`` and ``rho`` defaults to ``r``."""

    r: float
    rho: float | None = None

    def __post_init__(self):
        if not 0.5 < self.r < 1.0:
            raise ValueError(f"r must lie in (1/2, 1), got {self.r}")
        if self.rho is None:
            object.__setattr__(self, "rho", self.r)
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")


def _wright_series(rho, z, ctl, max_peak=None):
    """Return (values, ok) for the Mainardi series on an array of z >= 0."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    n = np.arange(ctl.max_terms, dtype=float)[:, None]
    a = rho * (n + 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        logz = np.log(z)[None, :]
        log_bound = np.where(n == 0, 0.0, n * logz) + gammaln(a) - gammaln(n + 1.0) - math.log(math.pi)
    log_bound = np.where((n > 0) & (z[None, :] == 0.0), -np.inf, log_bound)
    sign = np.where(n % 2 == 0, 1.0, -1.0) * np.sin(math.pi * a)
    # outside the usable range terms overflow; the flags below reject those points
    with np.errstate(over="ignore", invalid="ignore"):
        bound = np.exp(log_bound)
        values = (sign * bound).sum(axis=0)
    tail_small = bound[-1] < ctl.abs_tol
    well_conditioned = bound.max(axis=0) < (ctl.max_peak if max_peak is None else max_peak)
    return values, tail_small & well_conditioned


def wright_chi(rho: float, z, ctl: SeriesControl = DEFAULT_CONTROL):
    """Mainardi function by its power series.

    Raises :class:`NonConvergent` (with the truncated value attached) when the
    term bound is still above ``abs_tol`` at ``max_terms`` or when cancellation
    between terms would swamp ``abs_tol``.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    zz = np.asarray(z, dtype=float)
    if np.any(zz < 0) or not np.all(np.isfinite(zz)):
        raise ValueError("z must be finite and non-negative")
    values, ok = _wright_series(rho, zz.ravel(), ctl)
    out = values.reshape(zz.shape) if zz.ndim else float(values[0])
    if not np.all(ok):
        bad = zz.ravel()[~ok]
        raise NonConvergent(
            f"Mainardi series for rho={rho} not reliable at z={bad.min():.4g}", value=out
        )
    return out


# Kanter quadrature on [0, pi]: composite Gauss-Legendre, fixed once.
_KANTER_PANELS = 64
_KANTER_ORDER = 32


def _kanter_nodes():
    x, w = roots_legendre(_KANTER_ORDER)
    edges = np.linspace(0.0, math.pi, _KANTER_PANELS + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    phi = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wt = (half[:, None] * w[None, :]).ravel()
    return phi, wt


_PHI, _PHI_W = _kanter_nodes()
# The series is preferred only while it barely cancels; Kanter's integral is
# accurate to ~1e-15 wherever the series terms have grown past this.
_SERIES_PEAK_FOR_SWITCH = 10.0


def _mainardi_kanter(rho, z):
    z = np.asarray(z, dtype=float)
    phi = _PHI[:, None]
    log_a = (
        rho / (1 - rho) * np.log(np.sin(rho * phi))
        + np.log(np.sin((1 - rho) * phi))
        - np.log(np.sin(phi)) / (1 - rho)
    )
    big_l = log_a + np.log(z)[None, :] / (1 - rho)
    integrand = np.exp(big_l - np.exp(np.minimum(big_l, 700.0)))
    return (_PHI_W @ integrand) / (math.pi * (1 - rho) * z)


def mainardi(rho: float, z, ctl: SeriesControl = DEFAULT_CONTROL):
    """Mainardi function, robust for all z >= 0.

    Uses the series wherever it is well conditioned and Kanter's integral
    elsewhere.
    """
    zz = np.atleast_1d(np.asarray(z, dtype=float))
    values, ok = _wright_series(rho, zz.ravel(), ctl, max_peak=_SERIES_PEAK_FOR_SWITCH)
    if not np.all(ok):
        idx = ~ok
        values[idx] = _mainardi_kanter(rho, zz.ravel()[idx])
    return values.reshape(zz.shape) if np.ndim(z) else float(values[0])


def _ml_series(alpha, beta, z, ctl):
    z = np.atleast_1d(np.asarray(z, dtype=float))
    k = np.arange(ctl.max_terms, dtype=float)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        logz = np.log(np.abs(z))[None, :]
        log_mag = np.where(k == 0, 0.0, k * logz) - gammaln(alpha * k + beta)
    log_mag = np.where((k > 0) & (z[None, :] == 0.0), -np.inf, log_mag)
    sign = np.where((z[None, :] < 0) & (k % 2 == 1), -1.0, 1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        mag = np.exp(log_mag)
        values = (sign * mag).sum(axis=0)
    ok = (mag[-1] < ctl.abs_tol) & (mag.max(axis=0) < ctl.max_peak)
    return values, ok


def mittag_leffler(alpha: float, beta: float, z, ctl: SeriesControl = DEFAULT_CONTROL):
    r"""Two-parameter Mittag-Leffler function :math:`E_{\alpha,\beta}(z)` for real z.

    Plain power series.  The usable range is where the largest term stays
    below ``0.1 * abs_tol / (64 eps)`` (about 700 for the default tolerance), so
    that rounding in the alternating sum cannot exceed ``abs_tol``.  For
    ``alpha = 4/3`` and ``beta = 1`` this means roughly ``|z| <= 17``.  Outside
    the range :class:`NonConvergent` is raised with the raw sum attached.
    """
    if not 0.0 < alpha <= 2.0:
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
    if not beta > 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    zz = np.asarray(z, dtype=float)
    values, ok = _ml_series(alpha, beta, zz.ravel(), ctl)
    out = values.reshape(zz.shape) if zz.ndim else float(values[0])
    if not np.all(ok):
        bad = np.abs(zz.ravel()[~ok]).min()
        raise NonConvergent(
            f"Mittag-Leffler series E_({alpha},{beta}) outside its safe range at |z|={bad:.4g}",
            value=out,
        )
    return out


def mainardi_spread(rho: float) -> float:
    """Standard deviation of the Mainardi density (from its moments)."""
    m1 = math.exp(-gammaln(1 + rho))
    m2 = 2.0 * math.exp(-gammaln(1 + 2 * rho))
    return math.sqrt(max(m2 - m1 * m1, 0.0))


class SubordinationRule:
    """Nodes and density-weighted weights for integrals against M_r on [0, inf).

    The domain is truncated at ``theta_max``, found by doubling until the mass
    added by the last doubling falls below ``abs_tol``.  Panels are composite
    Gauss-Legendre with ``quad_nodes`` points each; their width shrinks for
    narrow densities (r near 1) and for oscillatory integrands whose angular
    frequency is bounded by ``max_frequency``.
    """

    def __init__(self, r: float, ctl: SeriesControl = DEFAULT_CONTROL, max_frequency: float = 0.0):
        if not 0.0 < r < 1.0:
            raise ValueError(f"r must lie in (0, 1), got {r}")
        self.r = r
        self.ctl = ctl
        width = min(1.0, 0.5 * mainardi_spread(r))
        if max_frequency > 0:
            width = min(width, 0.25 * ctl.quad_nodes / max_frequency)
        self.panel_width = width
        self._gl = roots_legendre(ctl.quad_nodes)

        theta_max = 2.0
        nodes, weights = self._panels(0.0, theta_max)
        mass = weights.sum()
        while True:
            new_nodes, new_weights = self._panels(theta_max, 2 * theta_max)
            added = new_weights.sum()
            nodes = np.concatenate([nodes, new_nodes])
            weights = np.concatenate([weights, new_weights])
            mass += added
            theta_max *= 2
            if abs(added) < ctl.abs_tol:
                break
            if theta_max > 1024:
                raise NonConvergent(f"tail mass of M_{r} not bounded by theta={theta_max}", value=mass)
        self.theta_max = theta_max
        self.nodes = nodes
        self.weights = weights
        self.mass = mass

    def _panels(self, lo, hi):
        x, w = self._gl
        n_panels = max(1, int(math.ceil((hi - lo) / self.panel_width)))
        edges = np.linspace(lo, hi, n_panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        theta = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        gl_w = (half[:, None] * w[None, :]).ravel()
        return theta, gl_w * mainardi(self.r, theta, self.ctl)

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]):
        """Return sum_j W_j f(theta_j); ``f`` may return shape (n_nodes, ...)."""
        vals = np.asarray(f(self.nodes), dtype=float)
        return np.tensordot(self.weights, vals, axes=(0, 0))


def subordinate(r: float, f: Callable[[np.ndarray], np.ndarray], ctl: SeriesControl = DEFAULT_CONTROL,
                max_frequency: float = 0.0):
    """Integral of ``M_r(theta) * f(theta)`` over theta >= 0.

    ``f`` must accept an array of theta values.  Pass ``max_frequency`` when
    ``f`` oscillates (e.g. ``cos(k * theta)`` has frequency ``k``).
    """
    SubordinationParams(r)
    return float(SubordinationRule(r, ctl, max_frequency).integrate(f))
