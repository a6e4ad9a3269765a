import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats as sps

from curetrial.survival_models import CURED_HORIZON, CureMixtureLaw, ExponentialLaw, MechanisticArmLaw
from curetrial.trial_engine import (
    Arm,
    RecruitmentPlan,
    ResponderClass,
    ScenarioConfig,
    SimulatedTrial,
    TrialBatch,
    assign_class_and_times,
    cut_at_calendar,
    cut_at_evaluable_count,
    cut_at_event_count,
    event_cut_time,
    generate_recruitment,
    simulate_trial,
    trial_rng,
)


def hand_trial(rand, latent, arm=None, dropout=None, cls=None):
    n = len(rand)
    return SimulatedTrial(
        arm=np.asarray(arm if arm is not None else [0, 1] * (n // 2) + [0] * (n % 2), dtype=np.int8),
        responder_class=np.asarray(cls if cls is not None else [ResponderClass.UNCURED] * n, dtype=np.int8),
        rand_time=np.asarray(rand, dtype=float),
        latent_event_time=np.asarray(latent, dtype=float),
        dropout_time=np.asarray(dropout if dropout is not None else [np.inf] * n, dtype=float),
        all_rand_time=np.sort(np.asarray(rand, dtype=float)),
    )


def ph_scenario(prevalence=1.0, dropout=(0.0, 0.0), ratio=1.0, targets=(20,) * 10, cap=None):
    return ScenarioConfig(
        ExponentialLaw(0.131),
        ExponentialLaw(0.101),
        RecruitmentPlan(targets, prevalence, cap),
        allocation_ratio=ratio,
        monthly_dropout=dropout,
    )


# --- recruitment ----------------------------------------------------------------


def test_schedule_extends_and_truncates_to_cap():
    plan = RecruitmentPlan.from_blocks([(12, 15), (17, 15)], total_cap=440)
    sched = plan.schedule()
    assert sched.sum() == 440
    assert_array_equal(sched[:15], 12)
    assert_array_equal(sched[15:-1], 17)
    assert sched[-1] == 440 - 180 - 17 * (len(sched) - 16)
    assert 0 < sched[-1] <= 17
    assert plan.max_patients == 440


def test_schedule_without_cap():
    plan = RecruitmentPlan((3, 4, 5))
    assert_array_equal(plan.schedule(), [3, 4, 5])


def test_plan_validation():
    with pytest.raises(ValueError):
        RecruitmentPlan(())
    with pytest.raises(ValueError):
        RecruitmentPlan((1, 2), prevalence=0.0)
    with pytest.raises(ValueError):
        RecruitmentPlan((5, 0), total_cap=100)


def test_recruitment_counts_are_binomial():
    plan = RecruitmentPlan((40,) * 5, prevalence=0.85)
    n = 4000
    eligible = np.empty(n)
    control = np.empty(n)
    for i in range(n):
        rec = generate_recruitment(plan, 2.0, trial_rng(3, i))
        eligible[i] = len(rec.rand_time)
        control[i] = np.sum(rec.arm == Arm.CONTROL)
        assert len(rec.all_rand_time) == 200
    # eligible ~ Bin(200, 0.85); control | eligible ~ Bin(eligible, 1/3)
    assert abs(eligible.mean() - 170) < 4 * math.sqrt(200 * 0.85 * 0.15 / n)
    assert abs(eligible.var() - 200 * 0.85 * 0.15) < 0.1 * 200 * 0.85 * 0.15
    frac = control.sum() / eligible.sum()
    assert abs(frac - 1 / 3) < 4 * math.sqrt((1 / 3) * (2 / 3) / eligible.sum())


def test_recruitment_times_within_months():
    plan = RecruitmentPlan((5, 0, 7))
    rec = generate_recruitment(plan, 1.0, trial_rng(0, 0))
    assert np.all(np.diff(rec.rand_time) >= 0)
    assert np.sum(rec.rand_time < 1) == 5
    assert np.sum((rec.rand_time >= 1) & (rec.rand_time < 2)) == 0
    assert np.sum(rec.rand_time >= 2) == 7
    assert np.all(rec.rand_time < 3)


# --- classes and times ------------------------------------------------------------


def test_mechanistic_class_frequencies():
    law = MechanisticArmLaw(0.16, 0.5, ExponentialLaw(0.135), ExponentialLaw(0.0924))
    n = 100_000
    cls, latent, dropout = assign_class_and_times(np.zeros(n, dtype=np.int8), law, law, (0.0, 0.0), trial_rng(5, 0))
    freq = np.bincount(cls, minlength=3)[:3] / n
    for f, p in zip(freq, law.class_probabilities):
        assert abs(f - p) < 4 * math.sqrt(p * (1 - p) / n)
    assert_allclose(law.class_probabilities, (0.84, 0.08, 0.08), atol=1e-15)
    assert np.all(latent[cls == ResponderClass.LONG] == law.longterm_horizon)
    assert np.all(np.isinf(dropout))


def test_everyone_long_term():
    law = MechanisticArmLaw(1.0, 1.0, ExponentialLaw(0.1), ExponentialLaw(0.1))
    cls, latent, _ = assign_class_and_times(np.zeros(50, dtype=np.int8), law, law, (0.0, 0.0), trial_rng(1, 1))
    assert np.all(cls == ResponderClass.LONG)
    assert np.all(latent == CURED_HORIZON)


def test_cure_mixture_cured_fraction():
    law = CureMixtureLaw(0.3, ExponentialLaw(0.2))
    n = 50_000
    cls, latent, _ = assign_class_and_times(np.ones(n, dtype=np.int8), law, law, (0.0, 0.0), trial_rng(2, 0))
    cured = cls == ResponderClass.CURED
    assert abs(cured.mean() - 0.3) < 4 * math.sqrt(0.21 / n)
    assert np.all(latent[cured] == CURED_HORIZON)
    assert sps.kstest(latent[~cured], sps.expon(scale=5).cdf).pvalue > 0.01


def test_dropout_exponential():
    law = ExponentialLaw(0.1)
    n = 100_000
    tau = 0.0042652
    _, _, drop = assign_class_and_times(np.zeros(n, dtype=np.int8), law, law, (tau, 0.0), trial_rng(9, 0))
    assert sps.kstest(drop, sps.expon(scale=1 / tau).cdf).pvalue > 0.01


def test_event_times_exponential_per_arm():
    # prevalence 1, no dropout, no cure: per-arm latent times are exponential
    sc = ph_scenario(targets=(100,) * 10)
    lat = {0: [], 1: []}
    for i in range(100):
        tr = simulate_trial(sc, 17, i)
        for a in (0, 1):
            lat[a].append(tr.latent_event_time[tr.arm == a])
    for a, rate in ((0, 0.131), (1, 0.101)):
        x = np.concatenate(lat[a])
        assert len(x) > 40_000
        assert sps.kstest(x, sps.expon(scale=1 / rate).cdf).pvalue > 0.01


# --- determinism ------------------------------------------------------------------


def test_simulation_is_deterministic():
    sc = ph_scenario(prevalence=0.85, dropout=(0.004, 0.004), ratio=2.0)
    a = simulate_trial(sc, 42, 7)
    b = simulate_trial(sc, 42, 7)
    for f in ("arm", "responder_class", "rand_time", "latent_event_time", "dropout_time", "all_rand_time"):
        assert_array_equal(getattr(a, f), getattr(b, f))
    c = simulate_trial(sc, 42, 8)
    assert not np.array_equal(a.rand_time, c.rand_time)
    d = simulate_trial(sc, 43, 7)
    assert not np.array_equal(a.rand_time, d.rand_time)


# --- cuts ---------------------------------------------------------------------------


def test_cut_hand_trace():
    tr = hand_trial([0.0, 1.0, 3.0], [2.0, 4.0, 6.0])  # events at 2, 5, 9
    data = cut_at_event_count(tr, 2, 120.0)
    assert data.cut_time == 5.0
    assert_array_equal(data.event, [True, True, False])
    assert_allclose(data.obs_time, [2.0, 4.0, 2.0])
    assert not data.under_evented
    assert cut_at_event_count(tr, 1).cut_time == 2.0


def test_cut_excludes_later_recruits():
    tr = hand_trial([0.0, 1.0, 6.0], [2.0, 4.0, 1.0])
    data = cut_at_event_count(tr, 2)
    assert data.cut_time == 5.0
    assert len(data) == 2


def test_cut_dropout_before_event():
    tr = hand_trial([0.0, 0.0, 0.0], [2.0, 4.0, 6.0], dropout=[np.inf, 3.0, np.inf])
    data = cut_at_event_count(tr, 2)
    assert data.cut_time == 6.0
    assert_array_equal(data.event, [True, False, True])
    assert_allclose(data.obs_time, [2.0, 3.0, 6.0])


def test_under_evented_all_cured():
    cls = [ResponderClass.CURED] * 4
    tr = hand_trial([0, 1, 2, 3], [CURED_HORIZON] * 4, cls=cls)
    data = cut_at_event_count(tr, 3, horizon=120.0)
    assert data.under_evented
    assert data.cut_time == 120.0
    assert data.n_events == 0
    assert_allclose(data.obs_time, 120.0 - np.array([0, 1, 2, 3]))


def test_cured_patients_never_have_events():
    sc = ScenarioConfig(
        CureMixtureLaw(0.5, ExponentialLaw(0.2)),
        CureMixtureLaw(0.5, ExponentialLaw(0.2)),
        RecruitmentPlan((30,) * 4),
        monthly_dropout=(0.01, 0.01),
    )
    for i in range(20):
        tr = simulate_trial(sc, 4, i)
        data = cut_at_event_count(tr, 20)
        cured = np.isin(data.responder_class, (ResponderClass.CURED, ResponderClass.LONG))
        assert not np.any(data.event & cured)


def test_dataset_invariants_and_monotone_cuts():
    sc = ph_scenario(prevalence=0.85, dropout=(0.0043, 0.0043), ratio=2.0)
    for i in range(30):
        tr = simulate_trial(sc, 5, i)
        prev = -np.inf
        for d in (1, 10, 50, 100, 150):
            data = cut_at_event_count(tr, d)
            assert np.all(data.obs_time >= 0)
            assert_array_equal(data.obs_time[data.event], data.latent_event_time[data.event])
            if not data.under_evented:
                assert data.n_events == d
            assert data.cut_time >= prev
            prev = data.cut_time


def test_calendar_cut():
    tr = hand_trial([0.0, 1.0, 3.0], [2.0, 4.0, 6.0])
    data = cut_at_calendar(tr, 4.0)
    assert len(data) == 3
    assert_array_equal(data.event, [True, False, False])
    assert_allclose(data.obs_time, [2.0, 3.0, 1.0])


def test_evaluable_cut():
    tr = hand_trial([0.5, 1.0, 2.0, 3.0], [10.0] * 4)
    data, decision = cut_at_evaluable_count(tr, 2, 2.0, 1.0)
    assert len(data) == 2
    assert data.cut_time == 3.0
    assert decision == 4.0
    _, decision0 = cut_at_evaluable_count(tr, 1, 0.0, 0.0)
    assert decision0 == 0.5
    with pytest.raises(ValueError):
        cut_at_evaluable_count(tr, 5)


def test_evaluable_cut_control_fraction():
    sc = ph_scenario(prevalence=0.85, ratio=2.0, targets=(12,) * 15 + (17,) * 20, cap=440)
    n_ctl = 0
    for i in range(300):
        data, _ = cut_at_evaluable_count(simulate_trial(sc, 8, i), 120)
        assert len(data) == 120
        n_ctl += np.sum(data.arm == Arm.CONTROL)
    assert abs(n_ctl / (300 * 120) - 1 / 3) < 4 * math.sqrt((2 / 9) / (300 * 120))


def test_event_cut_time_validation():
    tr = hand_trial([0.0], [1.0])
    with pytest.raises(ValueError):
        event_cut_time(tr, 0, 120.0)


# --- batches ----------------------------------------------------------------------


def test_batch_matches_per_trial_cuts():
    sc = ph_scenario(prevalence=0.85, dropout=(0.0043, 0.0043), ratio=2.0, targets=(12,) * 15 + (17,) * 20, cap=440)
    trials = [simulate_trial(sc, 6, i) for i in range(25)]
    batch = TrialBatch(trials, sc.recruitment.max_patients, sc.horizon)
    for d in (1, 100, 246, 400):
        time, event, exp, ctl, cut, under = batch.cut(d)
        for i, tr in enumerate(trials):
            data = cut_at_event_count(tr, d, sc.horizon)
            assert cut[i] == data.cut_time
            assert under[i] == data.under_evented
            k = len(data)
            assert_array_equal(time[i, :k], data.obs_time)
            assert_array_equal(event[i, :k], data.event)
            assert_array_equal(exp[i, :k], data.arm == Arm.EXPERIMENTAL)
            assert np.all(np.isinf(time[i, k:]))
            assert not np.any(exp[i, k:] | ctl[i, k:])
