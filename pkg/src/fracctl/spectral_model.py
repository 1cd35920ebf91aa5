"""Truncated Dirichlet-Laplacian eigenbasis on [0, pi] and the operator families on it.

Every operator here is diagonal in the basis e_n(z) = sqrt(2/pi) sin(n z),
except the control operator B.  Spectral vectors are plain numpy arrays of
length ``n_modes`` (entry ``n - 1`` holds the coefficient of e_n).

Per mode, with k = n x^r, the fractional families are

    c_n(x) = E_{2r}(-k^2)                              (C_r)
    s_n(x) = x E_{2r,2}(-k^2)                          (S_r = int_0^x C_r)
    p_n(x) = x^{2r-1} E_{2r,2r}(-k^2)                  (P_r, weight included)

and each has a subordination form: c_n(x) = int M_r(t) cos(k t) dt,
p_n(x) = x^(r-1)/n int r t M_r(t) sin(k t) dt.  For s_n the substitution
s = x u^(1/(2r)) turns int_0^x c_n into a Gauss-Jacobi sum over c_n(x u^(1/2r)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import gamma, roots_jacobi

from .errors import DimensionMismatch, NonConvergent
from .special_functions import (
    DEFAULT_CONTROL,
    SeriesControl,
    SubordinationParams,
    SubordinationRule,
    _ml_series,
)

FAMILIES = ("C_r", "S_r", "P_r")


class SpectralSpace:
    """First ``n_modes`` eigenpairs of d^2/dz^2 with Dirichlet conditions on [0, pi]."""

    def __init__(self, n_modes: int = 16, n_points: int | None = None):
        if n_modes < 1:
            raise ValueError("n_modes must be positive")
        self.n_modes = int(n_modes)
        self.modes = np.arange(1, self.n_modes + 1)
        self.eigenvalues = -(self.modes.astype(float) ** 2)
        # interior collocation points for pointwise (physical space) maps
        n_points = n_points or max(64, 4 * self.n_modes)
        self.z = np.arange(1, n_points) * math.pi / n_points
        self._synth = self.basis(self.z)  # (n_z, N)
        self._analysis = self._synth.T * (math.pi / n_points)

    def basis(self, z):
        z = np.asarray(z, dtype=float)
        return math.sqrt(2 / math.pi) * np.sin(np.multiply.outer(z, self.modes))

    def check(self, v, name="vector"):
        v = np.asarray(v, dtype=float)
        if v.shape[-1:] != (self.n_modes,):
            raise DimensionMismatch(f"{name} has trailing shape {v.shape[-1:]}, expected ({self.n_modes},)")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"{name} has non-finite entries")
        return v

    def unit(self, n):
        e = np.zeros(self.n_modes)
        e[n - 1] = 1.0
        return e

    def to_physical(self, coeffs):
        """Values on ``self.z`` for coefficient arrays of shape (..., N)."""
        return np.asarray(coeffs) @ self._synth.T

    def to_spectral(self, values):
        """Trapezoid projection <f, e_n> of values on ``self.z``; shape (..., n_z) -> (..., N)."""
        return np.asarray(values) @ self._analysis.T

    def project(self, profile):
        """Coefficients of a callable profile f(z)."""
        return self.to_spectral(profile(self.z))

    def cosine_apply(self, x, v):
        v = self.check(v)
        return np.cos(self.modes * x) * v

    def sine_apply(self, x, v):
        v = self.check(v)
        return np.sin(self.modes * x) / self.modes * v


class FractionalFamilies:
    """Per-mode evaluators for C_r, S_r, P_r.

    ``method`` selects the route: ``"series"`` (Mittag-Leffler power series,
    raises outside its safe range), ``"subordination"`` (quadrature against
    M_r), or ``"auto"`` (series where safe, subordination elsewhere).
    """

    def __init__(self, r: float, n_modes: int, method: str = "auto", ctl: SeriesControl = DEFAULT_CONTROL,
                 jacobi_nodes: int = 64):
        self.params = SubordinationParams(r)
        if method not in ("auto", "series", "subordination"):
            raise ValueError(f"unknown method {method!r}")
        self.r = float(r)
        self.n_modes = int(n_modes)
        self.modes = np.arange(1, self.n_modes + 1, dtype=float)
        self.method = method
        self.ctl = ctl
        self._rules = {}
        t, w = roots_jacobi(jacobi_nodes, 0.0, 1.0 / (2 * self.r) - 1.0)
        # map to [0, 1]: weight u^(1/2r - 1) du, prefactor 1/(2r)
        gam = 1.0 / (2 * self.r) - 1.0
        self._jac_u = 0.5 * (t + 1.0)
        self._jac_w = w * 0.5 ** (gam + 1.0) / (2 * self.r)

    # -- scalar kernels of k = n x^r ---------------------------------------

    def _rule(self, k_max):
        key = max(1.0, 2.0 ** math.ceil(math.log2(max(k_max, 1.0))))
        if key not in self._rules:
            self._rules[key] = SubordinationRule(self.r, self.ctl, max_frequency=key)
        return self._rules[key]

    def _ml(self, beta, k):
        return _ml_series(2 * self.r, beta, -(k**2), self.ctl)

    def _sub_cos(self, k):
        if k.size == 0:
            return np.zeros(0)
        rule = self._rule(k.max())
        return rule.weights @ np.cos(np.multiply.outer(rule.nodes, k))

    def _sub_sin(self, k):
        # int r t M_r(t) sin(k t) dt
        if k.size == 0:
            return np.zeros(0)
        rule = self._rule(k.max())
        th = rule.nodes
        return (rule.weights * self.r * th) @ np.sin(np.multiply.outer(th, k))

    def _route(self, beta, k, sub):
        k = np.asarray(k, dtype=float)
        flat = k.ravel()
        if self.method == "subordination":
            return sub(flat).reshape(k.shape), np.zeros(k.shape, bool)
        vals, ok = self._ml(beta, flat)
        if self.method == "series":
            if not np.all(ok):
                raise NonConvergent(f"Mittag-Leffler series unsafe at k={flat[~ok].min():.4g}", value=vals)
            return vals.reshape(k.shape), ok.reshape(k.shape)
        if not np.all(ok):
            vals = vals.copy()
            vals[~ok] = sub(flat[~ok])
        return vals.reshape(k.shape), ok.reshape(k.shape)

    def cos_kernel(self, k):
        """E_{2r}(-k^2)."""
        return self._route(1.0, k, self._sub_cos)[0]

    def sin_kernel(self, k):
        """k E_{2r,2r}(-k^2) = int r t M_r(t) sin(k t) dt."""
        k = np.asarray(k, dtype=float)

        def sub(kk):
            return self._sub_sin(kk)

        vals, ok = self._route(2 * self.r, k, sub)
        return np.where(ok, k * vals, vals)

    def int_kernel(self, k):
        """E_{2r,2}(-k^2) = int_0^1 c(k u^(1/2)) weighted by u^(1/2r-1)/(2r)."""

        def sub(kk):
            arg = np.multiply.outer(kk, np.sqrt(self._jac_u))
            return self.cos_kernel(arg) @ self._jac_w

        return self._route(2.0, k, sub)[0]

    # -- mode families ------------------------------------------------------

    def _k(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise ValueError("family arguments must be non-negative")
        return x, np.multiply.outer(x**self.r, self.modes)

    def c(self, x):
        """c_n(x), shape x.shape + (N,)."""
        _, k = self._k(x)
        return self.cos_kernel(k)

    def s(self, x):
        x, k = self._k(x)
        return x[..., None] * self.int_kernel(k)

    def p(self, x):
        x, k = self._k(x)
        g = self.sin_kernel(k)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (x[..., None] ** (self.r - 1.0)) * g / self.modes
        return np.where(x[..., None] > 0, out, 0.0)

    def family(self, which, x):
        if which == "C_r":
            return self.c(x)
        if which == "S_r":
            return self.s(x)
        if which == "P_r":
            return self.p(x)
        raise ValueError(f"unknown family {which!r}; expected one of {FAMILIES}")

    def eval(self, which, x, v):
        """Apply C_r(x), S_r(x) or P_r(x) to a spectral vector."""
        v = np.asarray(v, dtype=float)
        if v.shape[-1:] != (self.n_modes,):
            raise DimensionMismatch(f"vector has {v.shape[-1:]} modes, expected {self.n_modes}")
        return self.family(which, x) * v

    def oracle(self, which, x):
        """Mittag-Leffler series values (raises NonConvergent outside the safe range)."""
        ref = FractionalFamilies(self.r, self.n_modes, method="series", ctl=self.ctl)
        return ref.family(which, x)


@dataclass(frozen=True)
class BoundConstants:
    M1: float
    M2: float
    M3: float
    M4: float

    def as_dict(self):
        return {"M1": self.M1, "M2": self.M2, "M3": self.M3, "M4": self.M4}


def bound_constants(fam: FractionalFamilies, b: float, control=None, grid_points: int = 257) -> BoundConstants:
    """Constants of the uniform operator bounds on [0, b].

    M1 is the grid supremum of max_n c_n(x)^2 (at least 1); M2 and M3 follow
    from M1; M4 is ||B||^2, computed exactly from B B*.
    """
    x = np.linspace(0.0, b, grid_points)
    m1 = max(1.0, float(np.max(fam.c(x) ** 2)))
    r = fam.r
    m4 = control.norm_sq if control is not None else 1.0
    return BoundConstants(M1=m1, M2=m1 * b, M3=m1 * b**r / float(gamma(2 * r)), M4=m4)


class ControlOperator:
    """Bounded B: U -> H given by its matrix in the eigenbasis.

    Columns are control channels; ``channels`` labels them (the default
    example uses channels 2..N).
    """

    def __init__(self, matrix, channels=None, name="custom"):
        self.matrix = np.asarray(matrix, dtype=float)
        if self.matrix.ndim != 2:
            raise DimensionMismatch("control matrix must be 2-D")
        self.n_modes, self.n_channels = self.matrix.shape
        self.channels = list(channels) if channels is not None else list(range(1, self.n_channels + 1))
        self.name = name

    @classmethod
    def example_5_1(cls, n_modes):
        """B u = 2 u_2 e_1 + sum_{n>=2} u_n e_n, channels 2..max(N, 2)."""
        channels = list(range(2, max(n_modes, 2) + 1))
        mat = np.zeros((n_modes, len(channels)))
        mat[0, 0] = 2.0
        for j, ch in enumerate(channels):
            if ch <= n_modes:
                mat[ch - 1, j] = 1.0
        return cls(mat, channels, name="example_5_1")

    @classmethod
    def identity(cls, n_modes):
        return cls(np.eye(n_modes), name="identity")

    @classmethod
    def from_name(cls, name, n_modes):
        if name == "example_5_1":
            return cls.example_5_1(n_modes)
        if name == "identity":
            return cls.identity(n_modes)
        raise ValueError(f"unknown control operator {name!r}")

    def b_apply(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape[-1:] != (self.n_channels,):
            raise DimensionMismatch(f"control has {u.shape[-1:]} channels, expected {self.n_channels}")
        return u @ self.matrix.T

    def b_star_apply(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[-1:] != (self.n_modes,):
            raise DimensionMismatch(f"state has {v.shape[-1:]} modes, expected {self.n_modes}")
        return v @ self.matrix

    @cached_property
    def bbstar(self):
        return self.matrix @ self.matrix.T

    @cached_property
    def norm_sq(self):
        return float(np.linalg.eigvalsh(self.bbstar).max())
