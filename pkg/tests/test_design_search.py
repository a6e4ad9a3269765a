import math

import numpy as np
import pytest

from curetrial.design_search import (
    default_bounds,
    estimate_power,
    find_min_events,
    mc_se,
    power_grid,
    quantiles_with_inf,
)
from curetrial.scenario_file import load_scenario
from curetrial.stats import schoenfeld_events
from curetrial.survival_models import CureMixtureLaw, ExponentialLaw
from curetrial.trial_engine import RecruitmentPlan, ScenarioConfig


def small_ph(hr=0.6, ratio=1.0):
    return ScenarioConfig(
        ExponentialLaw(0.1),
        ExponentialLaw(0.1 * hr),
        RecruitmentPlan((20,) * 10),
        allocation_ratio=ratio,
        monthly_dropout=(0.004, 0.004),
        design_hazard_ratio=hr,
    )


@pytest.fixture(scope="module")
def mirros():
    return load_scenario("mirros")


def test_mc_se():
    assert mc_se(0.5, 100) == 0.05
    assert mc_se(0.0, 10) == 0.0


def test_quantiles_with_inf():
    x = np.array([3.0, 1.0, 2.0, 4.0])
    assert quantiles_with_inf(x, (0.25, 0.5, 0.75)) == list(np.quantile(x, (0.25, 0.5, 0.75)))
    y = np.array([1.0, 2.0, np.inf, np.inf])
    q = quantiles_with_inf(y, (0.25, 0.5, 0.75))
    assert q[0] == 1.75 and math.isinf(q[1]) and math.isinf(q[2])


def test_power_grid_invariants():
    sc = small_ph()
    res = power_grid(sc, range(20, 121, 10), 2000, 3)
    assert res.ds == list(range(20, 121, 10))
    for e in res.entries:
        assert e.mc_se == math.sqrt(e.power * (1 - e.power) / 2000)
    for a, b in zip(res.entries, res.entries[1:]):
        assert b.power >= a.power - 3 * a.mc_se
        assert b.t50 > a.t50
        assert b.t25 >= a.t25 and b.t75 >= a.t75


def test_estimate_power_equals_grid_entry():
    sc = small_ph()
    e = estimate_power(sc, 60, 700, 9)
    g = power_grid(sc, [40, 60, 80], 700, 9).entry(60)
    assert e == g


def test_null_power_near_alpha():
    sc = small_ph().null()
    e = estimate_power(sc, 100, 10_000, 21)
    assert abs(e.power - 0.05) <= 3 * math.sqrt(0.05 * 0.95 / 10_000)


def test_under_evented_counted_as_non_rejection():
    sc = ScenarioConfig(
        CureMixtureLaw(0.9, ExponentialLaw(0.5)),
        CureMixtureLaw(0.95, ExponentialLaw(0.5)),
        RecruitmentPlan((10,) * 5),
        horizon=60.0,
    )
    e = estimate_power(sc, 40, 200, 1)
    assert e.under_evented_frac == 1.0
    assert e.power == 0.0
    assert math.isinf(e.t50)


def test_threads_do_not_change_results():
    sc = small_ph(ratio=2.0)
    a = power_grid(sc, [30, 60, 90], 1203, 5, threads=1)
    b = power_grid(sc, [30, 60, 90], 1203, 5, threads=3)
    assert a.entries == b.entries


def test_input_validation():
    sc = small_ph()
    with pytest.raises(ValueError):
        power_grid(sc, [], 10, 1)
    with pytest.raises(ValueError):
        power_grid(sc, [0], 10, 1)
    with pytest.raises(ValueError):
        estimate_power(sc, 10, 0, 1)
    with pytest.raises(ValueError):
        find_min_events(sc, 10, 1, target_power=1.0)
    with pytest.raises(ValueError):
        find_min_events(sc, 10, 1, d_lo=50, d_hi=40)


def test_search_equals_full_grid():
    sc = small_ph(hr=0.55)
    res = find_min_events(sc, 800, 13, 0.8, d_lo=30, d_hi=150, block=4)
    full = power_grid(sc, range(30, 151), 800, 13)
    reached = [e.d for e in full.entries if e.power >= 0.8]
    assert res.reached
    assert res.d == reached[0]
    for e in res.grid.entries:
        assert e == full.entry(e.d)


def test_search_unreachable_reports_power_at_hi():
    sc = small_ph(hr=0.9)
    res = find_min_events(sc, 300, 2, 0.99, d_lo=10, d_hi=40)
    assert not res.reached
    assert res.d is None
    assert res.power_at_hi == power_grid(sc, [40], 300, 2).entries[0].power


def test_default_bounds_from_schoenfeld():
    sc = small_ph(hr=0.6)
    lo, hi = default_bounds(sc, 0.8)
    assert lo == schoenfeld_events(0.05, 0.8, 0.6, 1.0)
    assert hi == 2 * lo
    with pytest.raises(ValueError):
        default_bounds(ScenarioConfig(ExponentialLaw(0.1), ExponentialLaw(0.1), RecruitmentPlan((5,))), 0.8)


@pytest.fixture(scope="module")
def null_search(mirros):
    return find_min_events(mirros.sample_size.null(), 10_000, 2024, 0.05, d_lo=100, d_hi=120)


@pytest.mark.slow
@pytest.mark.xfail(
    strict=True,
    reason="the estimated null rejection rate at d_lo is 0.0494 here, a Monte Carlo dip just below 0.05",
)
def test_null_target_at_alpha_returns_lower_bound(null_search):
    assert null_search.d == 100


@pytest.mark.slow
def test_null_target_below_alpha_returns_lower_bound(null_search, mirros):
    first = null_search.grid.entries[0]
    assert first.d == 100
    assert abs(first.power - 0.05) <= 3 * first.mc_se
    # every d controls the type I error, so a target 3 se under alpha stops at d_lo
    target = 0.05 - 3 * math.sqrt(0.05 * 0.95 / 10_000)
    res = find_min_events(mirros.sample_size.null(), 10_000, 2024, target, d_lo=100, d_hi=120)
    assert res.d == 100


@pytest.mark.slow
def test_mirros_search_near_275(mirros):
    # first crossing on a noisy curve; 8 events is 3 MC standard errors at the local slope
    res = find_min_events(mirros.sample_size, 10_000, 2024, 0.85, d_lo=246, d_hi=300)
    assert res.reached
    assert abs(res.d - 275) <= 8


@pytest.mark.slow
def test_ph_search_with_default_bounds():
    sc = load_scenario("mirros_ph").sample_size
    res = find_min_events(sc, 10_000, 2024, 0.85)
    assert res.d_lo == schoenfeld_events(0.05, 0.85, 2 / 3, 2.0) == 246
    assert abs(res.d - 246) <= 2


@pytest.mark.slow
@pytest.mark.xfail(
    strict=True,
    reason="with 2:1 allocation the simulated minimum sits about 10 events below Schoenfeld's 246",
)
def test_ph_search_unclamped_agrees_with_schoenfeld():
    sc = load_scenario("mirros_ph").sample_size
    res = find_min_events(sc, 10_000, 2024, 0.85, d_lo=220, d_hi=260)
    assert abs(res.d - 246) <= 3


@pytest.mark.slow
def test_ph_search_balanced_allocation_agrees_with_schoenfeld():
    sc = ScenarioConfig(
        ExponentialLaw(0.1),
        ExponentialLaw(0.06),
        RecruitmentPlan((20,) * 10),
        design_hazard_ratio=0.6,
    )
    d0 = schoenfeld_events(0.05, 0.8, 0.6, 1.0)
    res = find_min_events(sc, 10_000, 31, 0.8, d_lo=d0 - 15, d_hi=d0 + 15)
    # power rises about 0.0033 per event here, so 3 MC standard errors span 4 events
    assert abs(res.d - d0) <= 4
