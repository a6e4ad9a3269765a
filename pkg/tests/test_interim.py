import math
from dataclasses import replace

import numpy as np
import pytest

from curetrial.interim import (
    DEFAULT_BOUNDARY_GRID,
    FutilityRule,
    _simulate,
    operating_characteristics,
    patient_savings,
    simulate_interim_decision,
)
from curetrial.scenario_file import load_scenario
from curetrial.trial_engine import RecruitmentPlan, ResponderClass, SimulatedTrial

M = 2000
SEED = 77


@pytest.fixture(scope="module")
def bundle():
    return load_scenario("mirros")


@pytest.fixture(scope="module")
def oc(bundle):
    null, alt = bundle.interim_scenarios()
    return operating_characteristics(null, alt, DEFAULT_BOUNDARY_GRID, 275, M, SEED, bundle.rule)


def table_trial(ctl_n, ctl_cr, exp_n, exp_cr):
    arm = np.r_[np.zeros(ctl_n), np.ones(exp_n)].astype(np.int8)
    cr = np.r_[np.arange(ctl_n) < ctl_cr, np.arange(exp_n) < exp_cr]
    n = len(arm)
    rand = np.linspace(0.0, 10.0, n)
    return SimulatedTrial(
        arm=arm,
        responder_class=np.where(cr, ResponderClass.SHORT, ResponderClass.NON).astype(np.int8),
        rand_time=rand,
        latent_event_time=np.full(n, 50.0),
        dropout_time=np.full(n, np.inf),
        all_rand_time=rand,
    )


def test_rule_validation():
    for kw in ({"boundary": 0.0}, {"boundary": 2.0, "n_evaluable": 1}, {"boundary": 2.0, "decision_lag": -1}):
        with pytest.raises(ValueError):
            FutilityRule(**kw)


def test_decision_on_constructed_table():
    tr = table_trial(40, 8, 80, 32)
    dec = simulate_interim_decision(tr, FutilityRule(2.0, n_evaluable=120))
    assert dec.passed
    assert dec.observed_or == pytest.approx(8 / 3, rel=1e-15)
    assert dec.decision_time == pytest.approx(10.0 + 3.0)


def test_boundary_tie_stops():
    tr = table_trial(40, 8, 80, 32)
    assert not simulate_interim_decision(tr, FutilityRule(8 / 3, n_evaluable=120)).passed
    assert simulate_interim_decision(tr, FutilityRule(1e-12, n_evaluable=120)).passed
    # even the worst table passes a vanishing boundary
    assert simulate_interim_decision(table_trial(40, 39, 80, 0), FutilityRule(1e-6, n_evaluable=120)).passed


def test_oc_table_consistency(oc):
    assert [e.x_star for e in oc.entries] == list(DEFAULT_BOUNDARY_GRID)
    for e in oc.entries:
        for p in (e.p_stop_alt, e.p_continue_null, e.p_stop_null, e.overall_power):
            assert 0.0 <= p <= 1.0
        assert e.p_stop_alt + e.p_continue_alt == pytest.approx(1.0, abs=1e-15)
        assert e.p_stop_null + e.p_continue_null == pytest.approx(1.0, abs=1e-15)
        assert e.se_overall_power == math.sqrt(e.overall_power * (1 - e.overall_power) / M)


def test_continue_probability_nonincreasing(oc):
    for a, b in zip(oc.entries, oc.entries[1:]):
        assert b.p_continue_alt <= a.p_continue_alt
        assert b.p_continue_null <= a.p_continue_null
        assert b.overall_power <= a.overall_power


def test_pass_monotone_per_trial(bundle):
    _, alt = bundle.interim_scenarios()
    or_hat, *_ = _simulate(alt, SEED, bundle.rule, None, 300, 1)
    grid = np.array(DEFAULT_BOUNDARY_GRID)
    passes = or_hat[:, None] > grid[None, :]
    # passing at a larger boundary implies passing at every smaller one
    assert np.all(passes[:, 1:] <= passes[:, :-1])


def test_overall_power_bounds(oc):
    for e in oc.entries:
        cap = min(oc.power_without_interim, e.p_continue_alt)
        assert e.overall_power <= cap + 3 * e.se_overall_power
        assert e.overall_power_null <= 0.05 + 3 * math.sqrt(0.05 * 0.95 / M)


def test_pass_and_rejection_positively_dependent(mirros_oc):
    e = mirros_oc.entry(2.0)
    indep = e.p_continue_alt * mirros_oc.power_without_interim
    assert e.overall_power - indep > 3 * e.se_overall_power


def test_requires_mechanistic_laws():
    ph = load_scenario("mirros_ph").sample_size
    with pytest.raises(ValueError):
        operating_characteristics(ph.null(), ph, [2.0], 246, 10, 1)


def test_mismatched_recruitment_rejected(bundle):
    null, alt = bundle.interim_scenarios()
    with pytest.raises(ValueError):
        operating_characteristics(null, replace(alt, allocation_ratio=1.0), [2.0], 275, 10, 1)


def test_threads_do_not_change_oc(bundle):
    null, alt = bundle.interim_scenarios()
    a = operating_characteristics(null, alt, [1.5, 2.0], 275, 600, 3, bundle.rule, threads=1)
    b = operating_characteristics(null, alt, [1.5, 2.0], 275, 600, 3, bundle.rule, threads=2)
    assert a.entries == b.entries
    assert a.power_without_interim == b.power_without_interim


def test_patient_savings_preset(bundle):
    _, alt = bundle.interim_scenarios()
    s = patient_savings(alt, bundle.rule, 500, 4)
    assert s.total_planned == 440
    med = s.recruited_at_decision[1]
    assert s.not_recruited_if_stop[1] == pytest.approx(440 - med)
    assert s.decision_time[0] <= s.decision_time[1] <= s.decision_time[2]


def test_patient_savings_degenerate_cases(bundle):
    _, alt = bundle.interim_scenarios()
    # every randomized patient is eligible and the interim needs all of them
    sc = replace(alt, recruitment=RecruitmentPlan((10,) * 12, prevalence=1.0, total_cap=120))
    s = patient_savings(sc, FutilityRule(2.0, 120, 0.0, 0.0), 50, 1)
    assert s.not_recruited_if_stop == (0.0, 0.0, 0.0)
    # a long lag puts the decision after the last recruit
    s = patient_savings(alt, FutilityRule(2.0, 120, 40.0, 1.0), 50, 1)
    assert s.not_recruited_if_stop == (0.0, 0.0, 0.0)
