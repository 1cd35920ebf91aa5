from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracctl.config import build_scenario, parse_config
from fracctl.errors import EmptyInterval, InvalidInterval
from fracctl.inclusion_select import (
    GrowthData,
    IntervalMap,
    SelectionStrategy,
    estimate_lipschitz,
    hausdorff_box,
    hausdorff_interval,
    hypothesis_audit,
    lipschitz_selection_gap,
    select,
)
from fracctl.mild_solver import Constants, ScenarioSpec

finite = st.floats(-1e3, 1e3, allow_nan=False)


@st.composite
def intervals(draw):
    a, b = draw(finite), draw(finite)
    return (min(a, b), max(a, b))


def brute_hausdorff(i1, i2, n=2001):
    a = np.linspace(i1[0], i1[1], n)
    b = np.linspace(i2[0], i2[1], n)
    d = np.abs(a[:, None] - b[None, :])
    return max(d.min(axis=1).max(), d.min(axis=0).max())


@pytest.mark.parametrize(
    "i1, i2, expected",
    [((0, 1), (0, 1), 0.0), ((0, 1), (0.5, 2), 1.0), ((-1, 0), (3, 4), 4.0)],
)
def test_hausdorff_examples(i1, i2, expected):
    assert hausdorff_interval(i1, i2) == expected
    assert brute_hausdorff(i1, i2) == pytest.approx(expected, abs=1e-12)


@given(intervals(), intervals())
@settings(max_examples=60, deadline=None)
def test_hausdorff_matches_brute_force(i1, i2):
    assert hausdorff_interval(i1, i2) == pytest.approx(brute_hausdorff(i1, i2), abs=1e-9 * (1 + abs(i1[1])))


@given(intervals(), intervals(), intervals())
@settings(max_examples=200, deadline=None)
def test_hausdorff_metric_axioms(i1, i2, i3):
    d12 = hausdorff_interval(i1, i2)
    assert d12 == hausdorff_interval(i2, i1)
    assert hausdorff_interval(i1, i1) == 0.0
    assert d12 <= hausdorff_interval(i1, i3) + hausdorff_interval(i3, i2) + 1e-12


def test_hausdorff_box_against_corner_oracle():
    # the sup of the distance to a box over another box is attained at a corner
    rng = np.random.default_rng(0)
    w = np.array([1.0, 0.5, 0.25])
    for _ in range(50):
        lo1, lo2 = rng.normal(size=3), rng.normal(size=3)
        hi1, hi2 = lo1 + rng.random(3), lo2 + rng.random(3)

        def excess(lo_a, hi_a, lo_b, hi_b):
            best = 0.0
            for corner in itertools.product(*zip(lo_a, hi_a)):
                c = np.array(corner)
                best = max(best, float(np.sqrt(np.sum(w * (c - np.clip(c, lo_b, hi_b)) ** 2))))
            return best

        ref = max(excess(lo1, hi1, lo2, hi2), excess(lo2, hi2, lo1, hi1))
        assert hausdorff_box(lo1, hi1, lo2, hi2, w) == pytest.approx(ref, abs=1e-14)


def test_invalid_intervals_are_rejected():
    with pytest.raises(InvalidInterval):
        hausdorff_interval((1.0, 0.0), (0.0, 1.0))
    with pytest.raises(InvalidInterval):
        hausdorff_interval((0.0, float("nan")), (0.0, 1.0))
    with pytest.raises(InvalidInterval):
        hausdorff_box([1.0], [0.0], [0.0], [1.0])


@pytest.mark.parametrize("strat", ["lower", "upper", "midpoint", "random(3)"])
def test_degenerate_interval_selects_its_point(strat):
    imap = IntervalMap.constant([2.5, -1.0], [2.5, -1.0])
    z = np.zeros((4, 2))
    out = select(imap, SelectionStrategy.parse(strat), np.linspace(0, 1, 4), z, z)
    assert np.array_equal(out, np.broadcast_to([2.5, -1.0], (4, 2)))


def test_selection_examples():
    imap = IntervalMap.constant([0.0], [2.0])
    z = np.zeros((1, 1))
    assert select(imap, SelectionStrategy("midpoint"), [0.0], z, z)[0, 0] == 1.0
    unit = IntervalMap.constant([0.0], [1.0])
    r7 = SelectionStrategy.parse("random(7)")
    a = select(unit, r7, np.zeros(5), np.zeros((5, 1)), np.zeros((5, 1)))
    b = select(unit, r7, np.zeros(5), np.zeros((5, 1)), np.zeros((5, 1)))
    assert a.tobytes() == b.tobytes()
    assert r7.label() == "random(7)"
    with pytest.raises(ValueError):
        SelectionStrategy("nearest")
    with pytest.raises(ValueError):
        SelectionStrategy("random")


def test_empty_interval_raises():
    imap = IntervalMap.constant([1.0], [0.0])
    with pytest.raises(EmptyInterval):
        select(imap, SelectionStrategy(), [0.0], np.zeros((1, 1)), np.zeros((1, 1)))


@given(seed=st.integers(0, 2**31), kind=st.sampled_from(["lower", "upper", "midpoint", "random"]))
@settings(max_examples=50, deadline=None)
def test_selection_stays_inside_band(seed, kind):
    rng = np.random.default_rng(seed)
    imap = IntervalMap.relative_band(0.5 / np.arange(1, 5), 1.0)
    z, zd = rng.normal(scale=3, size=(2, 6, 4))
    strat = SelectionStrategy(kind, seed if kind == "random" else None)
    g = select(imap, strat, np.linspace(0, 1, 6), z, zd)
    lo, hi = imap.bounds(np.linspace(0, 1, 6), z, zd)
    assert np.all(lo <= g) and np.all(g <= hi)


def test_selection_gap_examples():
    times = np.linspace(0.0, 1.0, 65)
    rng = np.random.default_rng(1)
    z1 = rng.normal(size=(65, 3))
    imap = IntervalMap.linear_singleton(1.5)
    assert lipschitz_selection_gap(imap, z1, z1, times).ratio == 0.0
    for _ in range(20):
        z2 = rng.normal(size=(65, 3))
        rep = lipschitz_selection_gap(imap, z1, z2, times, w_hat_integral=1.5**2 * 1.0)
        assert rep.passed


def test_band_map_gap_is_bounded_by_configured_weight():
    imap = IntervalMap.relative_band(0.5 / np.arange(1, 9), 1.0)
    q = 1.0 / np.arange(1, 9) ** 2
    times = np.linspace(0.0, 1.0, 33)
    rng = np.random.default_rng(2)
    for _ in range(100):
        z1, z2 = rng.normal(scale=2, size=(2, 33, 8))
        rep = lipschitz_selection_gap(imap, z1, z2, times, SelectionStrategy("upper"), variances=q,
                                      w_hat_integral=0.6)
        assert rep.passed, rep


def test_growth_data_validation():
    with pytest.raises(ValueError):
        GrowthData(beta=lambda s: 1.0 - s)
    assert GrowthData(w_hat=0.6).integral("w_hat", 2.0) == pytest.approx(1.2)


def test_audit_zero_scenario_passes():
    scn = ScenarioSpec(alpha=4 / 3, b=1.0, n_modes=3, varrho=lambda t: np.zeros(np.shape(t)),
                       constants=Constants.zero())
    checks = hypothesis_audit(scn, samples=50)
    assert checks and all(c.passed for c in checks)
    # the default unit memory kernel is not covered by ell = 0
    unit_kernel = hypothesis_audit(scn.with_(varrho=lambda t: np.ones(np.shape(t))), samples=50)
    assert [c.name for c in unit_kernel if not c.passed] == ["kernel bound"]


def test_audit_preset_passes():
    scn = build_scenario(parse_config("[problem]\nscenario = example_5_1\n[run]\nseed = 1\n"))
    checks = {c.name: c for c in hypothesis_audit(scn, samples=200, seed=3)}
    assert all(c.passed for c in checks.values()), [c for c in checks.values() if not c.passed]
    assert scn.constants.L_f1 == 2.0


def test_lipschitz_estimate_of_nonlinear_drift():
    scn = build_scenario(parse_config("[problem]\nscenario = example_5_1\n[run]\nseed = 1\n"))
    est = estimate_lipschitz(scn.f2, np.linspace(0, 1, 9), 8, samples=400, seed=4)
    assert 0.0 < est <= scn.constants.L_f2
