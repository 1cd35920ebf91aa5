"""INI configuration: parsing, validation, rendering and scenario construction.

Functions in a config are named with an optional numeric argument list, for
example ``poly(2, 1)`` for the profile 2 + z or ``shift(1)`` for the delay
x - 1.  Nothing in a config file is evaluated as code.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from importlib import resources

import numpy as np

from .errors import ParseError, ValidationError
from .inclusion_select import GrowthData, IntervalMap, SelectionStrategy, estimate_lipschitz
from .mild_solver import (
    ConstantJump,
    Constants,
    Impulse,
    IntegralJump,
    LinearJump,
    LinearMap,
    PointwiseMap,
    ScenarioSpec,
    ZeroJump,
    ZeroMap,
)
from .spectral_model import ControlOperator, SpectralSpace
from .stochastic_engine import QWienerSpec

PRESETS = ("example_5_1",)
EXPERIMENTS = ("simulate", "picard", "certificate", "sweep", "audit")
AUTO = "auto"

# allowed function names per kind, with (min, max) argument counts
_KINDS = {
    "profile": {"zero": (0, 0), "poly": (1, 8), "sin": (1, 2), "parabola": (0, 1)},
    "map": {"zero": (0, 0), "example_5_1": (0, 0), "linear": (1, 2)},
    "kernel": {"abs": (0, 0), "one": (0, 0), "zero": (0, 0)},
    "delay": {"identity": (0, 0), "shift": (1, 1)},
    "noise": {"zero": (0, 0), "power": (2, 2), "values": (1, 64)},
    "jump": {"zero": (0, 0), "const": (1, 64), "linear": (1, 1), "integral": (1, 2)},
    "interval": {"zero": (0, 0), "band": (1, 2), "linear": (1, 1), "constant": (2, 2)},
    "operator": {"example_5_1": (0, 0), "identity": (0, 0)},
}

_CALL = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\((.*)\))?\s*$")


def _number(text):
    text = text.strip()
    try:
        if "/" in text:
            return float(Fraction(text))
        return float(text)
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"not a number: {text!r}") from None


def parse_call(text, kind):
    """'name(a, b)' -> canonical string, after checking the name and arity."""
    m = _CALL.match(text)
    if not m:
        raise ValueError(f"cannot parse {text!r}")
    name, args = m.group(1), m.group(2)
    allowed = _KINDS[kind]
    if name not in allowed:
        raise ValueError(f"unknown {kind} {name!r}; expected one of {sorted(allowed)}")
    vals = [_number(a) for a in args.split(",")] if args and args.strip() else []
    lo, hi = allowed[name]
    if not lo <= len(vals) <= hi:
        raise ValueError(f"{name} takes {lo}..{hi} arguments, got {len(vals)}")
    return f"{name}({', '.join(repr(v) for v in vals)})" if vals else name


def split_call(spec):
    m = _CALL.match(spec)
    name, args = m.group(1), m.group(2)
    return name, [float(a) for a in args.split(",")] if args and args.strip() else []


def _numbers(text):
    return tuple(_number(v) for v in text.split(",") if v.strip())


def _auto_or_number(text):
    return AUTO if text.strip() == AUTO else _number(text)


def _auto_or_numbers(text):
    return AUTO if text.strip() == AUTO else _numbers(text)


def _int(text):
    v = _number(text)
    if v != int(v):
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


def _call(kind):
    return lambda text: parse_call(text, kind)


def _strategy(text):
    return SelectionStrategy.parse(text).label()


def _choice(options):
    def parse(text):
        text = text.strip()
        if text not in options:
            raise ValueError(f"expected one of {list(options)}, got {text!r}")
        return text

    return parse


def _optional_str(text):
    return text.strip() or None


# key -> (section, parser, default); default REQUIRED means the key must be set
REQUIRED = object()
SCHEMA = {
    "scenario": ("problem", _choice(PRESETS), None),
    "alpha": ("problem", _number, REQUIRED),
    "b": ("problem", _number, REQUIRED),
    "a": ("problem", _number, 0.0),
    "n_modes": ("problem", _int, REQUIRED),
    "phi": ("problem", _call("profile"), "zero"),
    "xi": ("problem", _call("profile"), "zero"),
    "f1": ("problem", _call("map"), "zero"),
    "f2": ("problem", _call("map"), "zero"),
    "varrho": ("problem", _call("kernel"), "one"),
    "nu1": ("problem", _call("delay"), "identity"),
    "nu2": ("problem", _call("delay"), "identity"),
    "nu3": ("problem", _call("delay"), "identity"),
    "h_times": ("problem", _numbers, ()),
    "h_weights": ("problem", _numbers, ()),
    "L_f1": ("problem", _auto_or_number, AUTO),
    "k1": ("problem", _auto_or_number, AUTO),
    "L_f2": ("problem", _auto_or_number, AUTO),
    "k2": ("problem", _auto_or_number, AUTO),
    "L_h": ("problem", _auto_or_number, AUTO),
    "variances": ("noise", _call("noise"), "zero"),
    "times": ("impulses", _numbers, ()),
    "jumps": ("impulses", None, ()),
    "djumps": ("impulses", None, ()),
    "L_I": ("impulses", _auto_or_numbers, AUTO),
    "L_J": ("impulses", _auto_or_numbers, AUTO),
    "map": ("inclusion", _call("interval"), "zero"),
    "strategy": ("inclusion", _strategy, "midpoint"),
    "w_hat": ("inclusion", _auto_or_number, AUTO),
    "wp": ("inclusion", _auto_or_number, AUTO),
    "theta": ("inclusion", _auto_or_number, AUTO),
    "ell": ("inclusion", _auto_or_number, AUTO),
    "operator": ("control", _call("operator"), "identity"),
    "target": ("control", _call("profile"), "zero"),
    "deltas": ("control", _numbers, (1.0, 0.1, 0.01)),
    "resolvent": ("control", _choice(("initial", "time_varying")), "initial"),
    "experiment": ("run", _choice(EXPERIMENTS), "simulate"),
    "steps": ("run", _int, 256),
    "samples": ("run", _int, 1),
    "seed": ("run", _int, REQUIRED),
    "tol": ("run", _number, 1e-10),
    "max_iter": ("run", _int, 60),
    "out": ("run", _optional_str, None),
    "trajectory_samples": ("run", _int, 4),
}
# single-key ranges, checked as soon as a key is parsed
_RANGES = {
    "alpha": (lambda v: 1.0 < v < 2.0, "must lie in (1, 2)"),
    "b": (lambda v: 0.0 < v < math.inf, "must be > 0"),
    "a": (lambda v: 0.0 <= v < math.inf, "must be >= 0"),
    "n_modes": (lambda v: v >= 1, "must be >= 1"),
    "steps": (lambda v: v >= 16, "must be >= 16"),
    "samples": (lambda v: v >= 1, "must be >= 1"),
    "seed": (lambda v: v >= 0, "must be a non-negative integer"),
    "tol": (lambda v: v > 0, "must be > 0"),
    "max_iter": (lambda v: v >= 1, "must be >= 1"),
    "trajectory_samples": (lambda v: v >= 0, "must be >= 0"),
    "deltas": (lambda v: len(v) > 0 and all(d > 0 for d in v), "must be a non-empty list of values > 0"),
}
SECTIONS = ("problem", "noise", "impulses", "inclusion", "control", "run")
_JUMP_KEY = re.compile(r"^(d?jump)_(\d+)$")


@dataclass(frozen=True)
class RunConfig:
    scenario: str | None
    alpha: float
    b: float
    a: float
    n_modes: int
    phi: str
    xi: str
    f1: str
    f2: str
    varrho: str
    nu1: str
    nu2: str
    nu3: str
    h_times: tuple
    h_weights: tuple
    L_f1: float | str
    k1: float | str
    L_f2: float | str
    k2: float | str
    L_h: float | str
    variances: str
    times: tuple
    jumps: tuple
    djumps: tuple
    L_I: tuple | str
    L_J: tuple | str
    map: str
    strategy: str
    w_hat: float | str
    wp: float | str
    theta: float | str
    ell: float | str
    operator: str
    target: str
    deltas: tuple
    resolvent: str
    experiment: str
    steps: int
    samples: int
    seed: int
    tol: float
    max_iter: int
    out: str | None
    trajectory_samples: int

    def replace(self, **changes):
        data = asdict(self)
        data.update(changes)
        cfg = RunConfig(**data)
        validate(cfg)
        return cfg


def _line_of(text, section, key):
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif current == section and re.match(rf"^{re.escape(key)}\s*[=:]", s):
            return i
    return None


def _read(text, source="<config>"):
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"), strict=True,
                                   empty_lines_in_values=False)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as e:
        raise ParseError("key outside of a [section]", e.lineno) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as e:
        raise ParseError(e.message.split(": ", 1)[-1] if hasattr(e, "message") else str(e), e.lineno) from None
    except configparser.ParsingError as e:
        lineno = e.errors[0][0] if e.errors else None
        raise ParseError("malformed line (expected 'key = value')", lineno) from None
    return cp


def _raw_values(text, source="<config>"):
    """{key: (raw text, line)} after checking sections and key names."""
    cp = _read(text, source)
    raw = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ParseError(f"unknown section [{section}]", _section_line(text, section))
        for key, value in cp.items(section):
            line = _line_of(text, section, key)
            if _JUMP_KEY.match(key) and section == "impulses":
                raw[key] = (value, line)
                continue
            if key not in SCHEMA:
                raise ValidationError(key, f"unknown key in [{section}] (line {line})")
            if SCHEMA[key][0] != section:
                raise ValidationError(key, f"belongs in [{SCHEMA[key][0]}], not [{section}] (line {line})")
            raw[key] = (value, line)
    return raw


def _section_line(text, section):
    for i, line in enumerate(text.splitlines(), 1):
        if line.strip() == f"[{section}]":
            return i
    return None


def load_preset_text(name):
    if name not in PRESETS:
        raise ValidationError("scenario", f"unknown preset {name!r}; available: {list(PRESETS)}")
    return resources.files("fracctl.presets").joinpath(f"{name}.ini").read_text(encoding="utf-8")


def parse_config(text, source="<config>"):
    """Parse and validate a config; a ``scenario`` key loads a preset underneath."""
    raw = _raw_values(text, source)
    if "scenario" in raw:
        name = raw["scenario"][0].strip()
        base = _raw_values(load_preset_text(name) if name in PRESETS else "", f"<preset {name}>")
        # jump keys replace the preset's impulse description as a whole
        if any(_JUMP_KEY.match(k) for k in raw) or "times" in raw:
            base = {k: v for k, v in base.items() if not _JUMP_KEY.match(k)}
        base.update(raw)
        raw = base
    values = {}
    missing = []
    for key, (section, parser, default) in SCHEMA.items():
        if parser is None:
            continue
        if key in raw:
            text_value, line = raw[key]
            try:
                values[key] = parser(text_value)
            except ValueError as e:
                raise ValidationError(key, f"{e} (line {line})") from None
            if key in _RANGES and not _RANGES[key][0](values[key]):
                raise ValidationError(key, f"{_RANGES[key][1]}, got {text_value.strip()} (line {line})")
        elif default is REQUIRED:
            missing.append(key)
        else:
            values[key] = default
    if missing:
        raise ValidationError(missing[0], "is required")
    n_imp = len(values["times"])
    jumps, djumps = ["zero"] * n_imp, ["zero"] * n_imp
    for key, (text_value, line) in raw.items():
        m = _JUMP_KEY.match(key)
        if not m:
            continue
        p = int(m.group(2))
        if not 1 <= p <= n_imp:
            raise ValidationError(key, f"impulse index {p} outside 1..{n_imp} (line {line})")
        try:
            spec = parse_call(text_value, "jump")
        except ValueError as e:
            raise ValidationError(key, f"{e} (line {line})") from None
        (jumps if m.group(1) == "jump" else djumps)[p - 1] = spec
    values["jumps"] = tuple(jumps)
    values["djumps"] = tuple(djumps)
    cfg = RunConfig(**values)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    def bad(key, msg):
        raise ValidationError(key, msg)

    if not 1.0 < cfg.alpha < 2.0:
        bad("alpha", f"must lie in (1, 2), got {cfg.alpha}")
    if not (cfg.b > 0 and math.isfinite(cfg.b)):
        bad("b", f"must be > 0, got {cfg.b}")
    if cfg.a < 0:
        bad("a", f"must be >= 0, got {cfg.a}")
    if cfg.n_modes < 1:
        bad("n_modes", "must be >= 1")
    if cfg.steps < 16:
        bad("steps", f"must be >= 16, got {cfg.steps}")
    if cfg.samples < 1:
        bad("samples", "must be >= 1")
    if cfg.seed < 0:
        bad("seed", "must be a non-negative integer")
    if not cfg.tol > 0:
        bad("tol", "must be > 0")
    if cfg.max_iter < 1:
        bad("max_iter", "must be >= 1")
    if cfg.trajectory_samples < 0:
        bad("trajectory_samples", "must be >= 0")
    if not cfg.deltas or any(d <= 0 for d in cfg.deltas):
        bad("deltas", "must be a non-empty list of values > 0")
    if any(d2 >= d1 for d1, d2 in zip(cfg.deltas, cfg.deltas[1:])):
        bad("deltas", "must be strictly decreasing")
    if any(t <= 0 or t >= cfg.b for t in cfg.times) or any(t2 <= t1 for t1, t2 in zip(cfg.times, cfg.times[1:])):
        bad("times", "impulse times must be strictly increasing inside (0, b)")
    if len(cfg.h_times) != len(cfg.h_weights):
        bad("h_weights", "must have as many entries as h_times")
    if any(t < 0 or t > cfg.b for t in cfg.h_times):
        bad("h_times", "must lie in [0, b]")
    for key in ("L_I", "L_J"):
        v = getattr(cfg, key)
        if v != AUTO and len(v) != len(cfg.times):
            bad(key, "needs one value per impulse")
    for key in ("L_f1", "k1", "L_f2", "k2", "L_h", "w_hat", "wp", "theta", "ell"):
        v = getattr(cfg, key)
        if v != AUTO and (v < 0 or not math.isfinite(v)):
            bad(key, "must be >= 0")
    for key in ("nu1", "nu2", "nu3"):
        name, args = split_call(getattr(cfg, key))
        if name == "shift" and not 0 <= args[0] <= cfg.a + 1e-12:
            bad(key, f"shift must lie in [0, a] so the delay stays inside the history, got {args[0]}")
    name, args = split_call(cfg.variances)
    if name == "power" and args[0] < 0:
        bad("variances", "scale must be >= 0")
    if name == "values" and (len(args) > cfg.n_modes or min(args) < 0):
        bad("variances", "needs at most n_modes non-negative values")
    name, args = split_call(cfg.map)
    if name == "band" and args[0] < 0:
        bad("map", "band scale must be >= 0")
    if name == "constant" and args[0] > args[1]:
        bad("map", "lower bound exceeds upper bound")


def _fmt(v):
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render(cfg: RunConfig) -> str:
    """Config text that parses back to ``cfg``; preset references are expanded."""
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        for f in fields(RunConfig):
            key = f.name
            sec, parser, _ = SCHEMA[key]
            if sec != section or parser is None:
                continue
            v = getattr(cfg, key)
            if v is None:
                continue
            lines.append(f"{key} = {_fmt(v)}")
        if section == "impulses":
            for p, (j, dj) in enumerate(zip(cfg.jumps, cfg.djumps), 1):
                lines.append(f"jump_{p} = {j}")
                lines.append(f"djump_{p} = {dj}")
        lines.append("")
    return "\n".join(lines)


# -- scenario construction ------------------------------------------------------


def profile_fn(spec):
    name, args = split_call(spec)
    if name == "zero":
        return lambda z: np.zeros_like(z)
    if name == "poly":
        return lambda z: np.polynomial.polynomial.polyval(z, args)
    if name == "sin":
        k, amp = args[0], (args[1] if len(args) > 1 else 1.0)
        return lambda z: amp * np.sin(k * z)
    if name == "parabola":
        amp = args[0] if args else 1.0
        return lambda z: amp * z * (math.pi - z)
    raise ValueError(spec)


def _example_f1(x, u, ud):
    return 2.0 * np.exp(-x) * np.sin(x) / (math.sqrt(3.0) + np.abs(u) + np.abs(ud))


def _example_f2(x, u, ud):
    s = np.abs(u) + np.abs(ud)
    return s / (5.0 * math.pi + s)


def state_map(spec, space, which):
    name, args = split_call(spec)
    if name == "zero":
        return ZeroMap()
    if name == "linear":
        return LinearMap(args[0], args[1] if len(args) > 1 else 0.0)
    fn = _example_f1 if which == "f1" else _example_f2
    return PointwiseMap(space, fn, name=f"example_5_1_{which}")


def kernel_fn(spec):
    if spec == "abs":
        return lambda t: np.abs(np.asarray(t, dtype=float))
    if spec == "one":
        return lambda t: np.ones(np.shape(t))
    return lambda t: np.zeros(np.shape(t))


def delay_fn(spec):
    name, args = split_call(spec)
    if name == "identity":
        return lambda t: np.asarray(t, dtype=float)
    d = args[0]
    return lambda t: np.asarray(t, dtype=float) - d


def noise_spec(spec, n):
    name, args = split_call(spec)
    if name == "zero":
        return QWienerSpec.zero(n)
    if name == "power":
        return QWienerSpec.power_law(n, args[0], args[1])
    q = np.zeros(n)
    q[: len(args)] = args
    return QWienerSpec(q)


def jump_map(spec, n):
    name, args = split_call(spec)
    if name == "zero":
        return ZeroJump()
    if name == "const":
        v = np.zeros(n)
        v[: min(n, len(args))] = args[:n]
        return ConstantJump(v)
    if name == "linear":
        return LinearJump(args[0])
    return IntegralJump(args[0], args[1] if len(args) > 1 else 0.0)


def interval_map(spec, n):
    name, args = split_call(spec)
    if name == "zero":
        return IntervalMap.zero()
    if name == "band":
        width = args[1] if len(args) > 1 else 1.0
        return IntervalMap.relative_band(args[0] / np.arange(1, n + 1), width)
    if name == "linear":
        return IntervalMap.linear_singleton(args[0])
    return IntervalMap.constant(np.full(n, args[0]), np.full(n, args[1]))


def _estimate_growth(fn, n, b, seed=0):
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, b, 17)
    z, zd = (2.0 * rng.standard_normal((200, x.size, n)) for _ in range(2))
    num = np.sum(np.asarray(fn(x, z, zd)) ** 2, axis=-1)
    den = 1.0 + np.sum(z**2, axis=-1) + np.sum(zd**2, axis=-1)
    return float(np.max(num / den))


# sampled constants are inflated by this factor to cover unsampled states
AUTO_MARGIN = 1.25


def build_scenario(cfg: RunConfig) -> ScenarioSpec:
    n = cfg.n_modes
    space = SpectralSpace(n)
    phi_c = space.project(profile_fn(cfg.phi))
    xi_c = space.project(profile_fn(cfg.xi))
    f1 = state_map(cfg.f1, space, "f1")
    f2 = state_map(cfg.f2, space, "f2")
    impulses = tuple(
        Impulse(t, jump_map(j, n), jump_map(dj, n)) for t, j, dj in zip(cfg.times, cfg.jumps, cfg.djumps)
    )
    varrho = kernel_fn(cfg.varrho)
    G = interval_map(cfg.map, n)
    noise = noise_spec(cfg.variances, n)

    def pick(value, estimate):
        return float(estimate()) if value == AUTO else float(value)

    def lip(m):
        return AUTO_MARGIN * estimate_lipschitz(m, np.linspace(0, cfg.b, 17), n, seed=cfg.seed)

    def grow(m):
        return AUTO_MARGIN * _estimate_growth(m, n, cfg.b, cfg.seed)

    L_I = tuple(imp.jump.lipschitz(cfg.a, imp.time) for imp in impulses) if cfg.L_I == AUTO else tuple(cfg.L_I)
    L_J = tuple(imp.djump.lipschitz(cfg.a, imp.time) for imp in impulses) if cfg.L_J == AUTO else tuple(cfg.L_J)
    tt = np.linspace(0.0, cfg.b, 257)
    ell = pick(cfg.ell, lambda: float(np.max(varrho(tt) ** 2)))
    q = noise.variances

    def g_lip():
        lo = lambda x, z, zd: G.bounds(x, z, zd)[0]  # noqa: E731
        hi = lambda x, z, zd: G.bounds(x, z, zd)[1]  # noqa: E731
        return float(q.max()) * (lip(lo) + lip(hi)) if q.max() > 0 else 0.0

    def g_zero():
        z = np.zeros((1, 1, n))
        lo, hi = G.bounds(np.zeros(1), z, z)
        return float(np.sqrt(np.sum(q * np.maximum(0.0, np.maximum(lo, -hi)) ** 2)))

    def g_growth():
        extreme = lambda x, z, zd: np.sqrt(q) * np.maximum(*map(np.abs, G.bounds(x, z, zd)))  # noqa: E731
        return grow(extreme)

    growth = GrowthData(
        w_hat=pick(cfg.w_hat, lambda: max(g_lip(), g_zero())),
        wp=pick(cfg.wp, g_growth),
        theta=pick(cfg.theta, lambda: grow(f2)),
        ell=ell,
    )
    constants = Constants(
        L_f1=pick(cfg.L_f1, lambda: lip(f1)),
        k1=pick(cfg.k1, lambda: grow(f1)),
        L_f2=pick(cfg.L_f2, lambda: lip(f2)),
        k2=pick(cfg.k2, lambda: grow(f2)),
        L_h=pick(cfg.L_h, lambda: float(np.sum(np.abs(cfg.h_weights))) ** 2),
        L_I=L_I,
        L_J=L_J,
        growth=growth,
    )
    phi = (lambda t, c=phi_c: np.tile(c, (np.size(t), 1)))
    return ScenarioSpec(
        alpha=cfg.alpha,
        b=cfg.b,
        n_modes=n,
        a=cfg.a,
        phi=phi,
        xi=xi_c,
        h_times=tuple(cfg.h_times),
        h_weights=tuple(cfg.h_weights),
        f1=f1,
        f2=f2,
        varrho=varrho,
        G=G,
        nu1=delay_fn(cfg.nu1),
        nu2=delay_fn(cfg.nu2),
        nu3=delay_fn(cfg.nu3),
        impulses=impulses,
        noise=noise,
        control=ControlOperator.from_name(cfg.operator, n),
        constants=constants,
        name=cfg.scenario or "custom",
    )


def target_vector(cfg: RunConfig):
    return SpectralSpace(cfg.n_modes).project(profile_fn(cfg.target))


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path))
