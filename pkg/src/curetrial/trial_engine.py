"""Patient-level trial generation and analysis cuts.

A simulated trial is stored column-wise (:class:`SimulatedTrial`); cutting it
at the d-th event, at a calendar date, or at the n-th evaluable patient yields
a :class:`TrialDataset`.  Each trial draws from its own counter-based stream
keyed by ``(seed, trial index)``, so results do not depend on how trials are
scheduled across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import NamedTuple, Sequence

import numpy as np
from numpy.typing import NDArray

from .survival_models import (
    CURED_HORIZON,
    CureMixtureLaw,
    MechanisticArmLaw,
    SurvivalDistribution,
)

__all__ = [
    "Arm",
    "ResponderClass",
    "RecruitmentPlan",
    "ScenarioConfig",
    "PatientRecord",
    "TrialDataset",
    "SimulatedTrial",
    "TrialBatch",
    "Recruitment",
    "trial_rng",
    "generate_recruitment",
    "assign_class_and_times",
    "simulate_trial",
    "cut_at_event_count",
    "cut_at_calendar",
    "cut_at_evaluable_count",
]


class Arm(IntEnum):
    CONTROL = 0
    EXPERIMENTAL = 1


class ResponderClass(IntEnum):
    NON = 0
    SHORT = 1
    LONG = 2
    UNCURED = 3
    CURED = 4


_CURED_CLASSES = (ResponderClass.LONG, ResponderClass.CURED)


@dataclass(frozen=True)
class RecruitmentPlan:
    """Planned overall accrual per month, with analysis-eligibility thinning.

    ``monthly_targets`` are overall randomization counts per calendar month.
    If ``total_cap`` exceeds their sum, accrual continues at the last monthly
    rate; the final month is truncated so that the cap is met exactly.  Each
    randomized patient is analysis-eligible with probability ``prevalence``.
    """

    monthly_targets: tuple[int, ...]
    prevalence: float = 1.0
    total_cap: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "monthly_targets", tuple(int(x) for x in self.monthly_targets))
        if not self.monthly_targets:
            raise ValueError("recruitment plan has no months")
        if any(x < 0 for x in self.monthly_targets):
            raise ValueError("monthly targets must be nonnegative")
        if not 0.0 < self.prevalence <= 1.0:
            raise ValueError(f"prevalence must lie in (0, 1], got {self.prevalence!r}")
        if self.total_cap is not None and self.total_cap < 0:
            raise ValueError("total_cap must be nonnegative")
        if self.total_cap is not None and self.total_cap > sum(self.monthly_targets) and self.monthly_targets[-1] == 0:
            raise ValueError("cap cannot be reached when the last monthly target is zero")

    @classmethod
    def from_blocks(cls, blocks: Sequence[tuple[int, int]], prevalence: float = 1.0, total_cap: int | None = None):
        """Build from ``(count per month, number of months)`` pairs."""
        targets: list[int] = []
        for count, months in blocks:
            targets.extend([int(count)] * int(months))
        return cls(tuple(targets), prevalence, total_cap)

    def schedule(self) -> NDArray[np.int64]:
        """Overall randomization count per month after applying the cap."""
        targets = list(self.monthly_targets)
        if self.total_cap is None:
            return np.asarray(targets, dtype=np.int64)
        while sum(targets) < self.total_cap:
            targets.append(targets[-1])
        out = []
        total = 0
        for x in targets:
            if total >= self.total_cap:
                break
            take = min(x, self.total_cap - total)
            out.append(take)
            total += take
        return np.asarray(out, dtype=np.int64)

    @property
    def max_patients(self) -> int:
        return int(self.schedule().sum())


@dataclass(frozen=True)
class ScenarioConfig:
    """Design assumptions for one simulated two-arm trial.

    ``monthly_dropout`` holds the per-arm exponential dropout rate per month
    (control, experimental).  ``horizon`` is the last calendar month at which
    events are counted.  ``design_hazard_ratio`` is the hazard ratio fed to
    Schoenfeld's formula; when unset it is the ratio of the arms' medians.
    """

    control: SurvivalDistribution
    experimental: SurvivalDistribution
    recruitment: RecruitmentPlan
    allocation_ratio: float = 1.0
    monthly_dropout: tuple[float, float] = (0.0, 0.0)
    alpha: float = 0.05
    horizon: float = 120.0
    target_power: float = 0.85
    design_hazard_ratio: float | None = None
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "monthly_dropout", tuple(float(x) for x in self.monthly_dropout))
        if isinstance(self.control, MechanisticArmLaw) != isinstance(self.experimental, MechanisticArmLaw):
            raise ValueError("both arms must use the same model family")
        if not (self.allocation_ratio > 0 and math.isfinite(self.allocation_ratio)):
            raise ValueError("allocation_ratio must be positive")
        if len(self.monthly_dropout) != 2 or any(not 0.0 <= x < 1.0 for x in self.monthly_dropout):
            raise ValueError("monthly dropout rates must lie in [0, 1) for both arms")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def is_mechanistic(self) -> bool:
        return isinstance(self.control, MechanisticArmLaw)

    @property
    def control_probability(self) -> float:
        return 1.0 / (1.0 + self.allocation_ratio)

    def planning_hazard_ratio(self) -> float:
        if self.design_hazard_ratio is not None:
            return self.design_hazard_ratio
        # exponential-equivalent ratio of medians
        return float(self.control.isf(0.5) / self.experimental.isf(0.5))

    def null(self) -> "ScenarioConfig":
        """Same design with the experimental arm behaving like control."""
        return replace(
            self,
            experimental=self.control,
            monthly_dropout=(self.monthly_dropout[0], self.monthly_dropout[0]),
            name=f"{self.name}-null",
        )


@dataclass(frozen=True)
class PatientRecord:
    patient_id: int
    arm: Arm
    responder_class: ResponderClass
    cr_flag: bool
    randomization_time: float
    latent_event_time: float
    dropout_time: float
    observed_time: float
    event_flag: bool


@dataclass
class TrialDataset:
    """Analysis-ready patients of one trial after a cut.

    ``cut_rule`` is ``"event-count"``, ``"evaluable-count"`` or
    ``"calendar"``; ``target`` is the requested d (or n).  Event-count cuts
    that never reach ``target`` events within the horizon are cut at the
    horizon and flagged ``under_evented``.
    """

    arm: NDArray[np.int8]
    responder_class: NDArray[np.int8]
    rand_time: NDArray[np.float64]
    latent_event_time: NDArray[np.float64]
    dropout_time: NDArray[np.float64]
    obs_time: NDArray[np.float64]
    event: NDArray[np.bool_]
    cut_time: float
    cut_rule: str
    target: int | None = None
    under_evented: bool = False
    trial_id: int = 0
    patient_id: NDArray[np.int64] = field(default=None)

    def __post_init__(self):
        if self.patient_id is None:
            self.patient_id = np.arange(len(self.arm), dtype=np.int64)

    @classmethod
    def from_arrays(cls, time, event, arm, cut_time: float = np.inf, cut_rule: str = "calendar") -> "TrialDataset":
        """Wrap plain survival data (no latent information) as a dataset."""
        time = np.asarray(time, dtype=float)
        event = np.asarray(event, dtype=bool)
        arm = np.asarray(arm, dtype=np.int8)
        if not (time.shape == event.shape == arm.shape) or time.ndim != 1:
            raise ValueError("time, event and arm must be 1-d arrays of equal length")
        n = len(time)
        return cls(
            arm=arm,
            responder_class=np.full(n, ResponderClass.UNCURED, dtype=np.int8),
            rand_time=np.zeros(n),
            latent_event_time=np.where(event, time, np.inf),
            dropout_time=np.where(event, np.inf, time),
            obs_time=time,
            event=event,
            cut_time=float(cut_time),
            cut_rule=cut_rule,
        )

    def __len__(self) -> int:
        return len(self.arm)

    @property
    def cr_flag(self) -> NDArray[np.bool_]:
        return np.isin(self.responder_class, (ResponderClass.SHORT, ResponderClass.LONG))

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    def arm_mask(self, arm: int) -> NDArray[np.bool_]:
        return self.arm == int(arm)

    def records(self) -> list[PatientRecord]:
        cr = self.cr_flag
        return [
            PatientRecord(
                patient_id=int(self.patient_id[i]),
                arm=Arm(int(self.arm[i])),
                responder_class=ResponderClass(int(self.responder_class[i])),
                cr_flag=bool(cr[i]),
                randomization_time=float(self.rand_time[i]),
                latent_event_time=float(self.latent_event_time[i]),
                dropout_time=float(self.dropout_time[i]),
                observed_time=float(self.obs_time[i]),
                event_flag=bool(self.event[i]),
            )
            for i in range(len(self))
        ]


@dataclass
class SimulatedTrial:
    """Latent data of one simulated trial, before any analysis cut.

    Only analysis-eligible patients carry event data; ``all_rand_time`` holds
    the randomization times of every randomized patient (eligible or not).
    Cured patients have ``latent_event_time == CURED_HORIZON``.
    """

    arm: NDArray[np.int8]
    responder_class: NDArray[np.int8]
    rand_time: NDArray[np.float64]
    latent_event_time: NDArray[np.float64]
    dropout_time: NDArray[np.float64]
    all_rand_time: NDArray[np.float64]
    index: int = 0

    def __len__(self) -> int:
        return len(self.arm)

    @property
    def cured(self) -> NDArray[np.bool_]:
        return np.isin(self.responder_class, _CURED_CLASSES)

    @property
    def cr_flag(self) -> NDArray[np.bool_]:
        return np.isin(self.responder_class, (ResponderClass.SHORT, ResponderClass.LONG))

    def event_calendar_times(self) -> NDArray[np.float64]:
        """Calendar time of each patient's event, ``inf`` if dropout or cure comes first."""
        happens = ~self.cured & (self.latent_event_time <= self.dropout_time)
        return np.where(happens, self.rand_time + self.latent_event_time, np.inf)

    def recruited_by(self, calendar_time: float) -> int:
        """Number of patients (eligible or not) randomized by ``calendar_time``."""
        return int(np.searchsorted(self.all_rand_time, calendar_time, side="right"))


class Recruitment(NamedTuple):
    rand_time: NDArray[np.float64]
    arm: NDArray[np.int8]
    all_rand_time: NDArray[np.float64]


def trial_rng(seed: int, index: int) -> np.random.Generator:
    """Independent Philox stream for trial ``index`` under master ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def generate_recruitment(plan: RecruitmentPlan, allocation_ratio: float, rng: np.random.Generator) -> Recruitment:
    """Randomization calendar of one trial.

    Per month, the eligible count is Binomial(target, prevalence) and the
    control count Binomial(eligible, 1 / (1 + r)); arrivals are uniform within
    the month.  Ineligible patients are placed the same way and only enter
    ``all_rand_time``.
    """
    schedule = plan.schedule()
    months = np.arange(len(schedule), dtype=float)
    eligible = rng.binomial(schedule, plan.prevalence)
    control = rng.binomial(eligible, 1.0 / (1.0 + allocation_ratio))
    rand_time = np.repeat(months, eligible) + rng.random(int(eligible.sum()))
    # within each month the first `control` draws go to control; draws are iid
    offsets = np.repeat(np.cumsum(eligible) - eligible, eligible)
    position = np.arange(int(eligible.sum())) - offsets
    arm = np.where(position < np.repeat(control, eligible), Arm.CONTROL, Arm.EXPERIMENTAL).astype(np.int8)
    ineligible = schedule - eligible
    other_time = np.repeat(months, ineligible) + rng.random(int(ineligible.sum()))
    order = np.argsort(rand_time, kind="stable")
    all_rand_time = np.sort(np.concatenate([rand_time, other_time]))
    return Recruitment(rand_time[order], arm[order], all_rand_time)


def _class_and_time(law: SurvivalDistribution, u_class, u_time):
    n = len(u_class)
    if isinstance(law, MechanisticArmLaw):
        p_non, p_short, _ = law.class_probabilities
        cls = np.where(
            u_class < p_non,
            ResponderClass.NON,
            np.where(u_class < p_non + p_short, ResponderClass.SHORT, ResponderClass.LONG),
        ).astype(np.int8)
        t = np.full(n, law.longterm_horizon)
        non = cls == ResponderClass.NON
        short = cls == ResponderClass.SHORT
        t[non] = law.nonresponder_law.isf(u_time[non])
        t[short] = law.shortterm_law.isf(u_time[short])
        return cls, t
    p = law.cure_proportion
    cured = u_class <= p
    cls = np.where(cured, ResponderClass.CURED, ResponderClass.UNCURED).astype(np.int8)
    t = np.full(n, CURED_HORIZON)
    # inverse-transform sampling on the uncured part of the survival curve
    t[~cured] = law.isf(u_class[~cured])
    return cls, t


def assign_class_and_times(
    arm: NDArray,
    control: SurvivalDistribution,
    experimental: SurvivalDistribution,
    monthly_dropout: tuple[float, float],
    rng: np.random.Generator,
) -> tuple[NDArray[np.int8], NDArray[np.float64], NDArray[np.float64]]:
    """Responder class, latent event time and dropout time per patient.

    Mechanistic arms draw the class with probabilities
    ``(1 - p_CR, p_CR (1 - p_L), p_CR p_L)``; cure mixtures split into cured
    and uncured.  Dropout is exponential with the arm's monthly rate
    (``inf`` when the rate is zero).
    """
    arm = np.asarray(arm)
    n = len(arm)
    # one uniform in (0, 1] per patient and role
    u_class = 1.0 - rng.random(n)
    u_time = 1.0 - rng.random(n)
    u_drop = 1.0 - rng.random(n)
    cls = np.empty(n, dtype=np.int8)
    latent = np.empty(n)
    dropout = np.empty(n)
    for a, law in ((Arm.CONTROL, control), (Arm.EXPERIMENTAL, experimental)):
        m = arm == a
        cls[m], latent[m] = _class_and_time(law, u_class[m], u_time[m])
        tau = monthly_dropout[a]
        with np.errstate(divide="ignore"):
            dropout[m] = -np.log(u_drop[m]) / tau if tau > 0 else np.inf
    return cls, latent, dropout


def simulate_trial(scenario: ScenarioConfig, seed: int, index: int = 0) -> SimulatedTrial:
    rng = trial_rng(seed, index)
    rec = generate_recruitment(scenario.recruitment, scenario.allocation_ratio, rng)
    cls, latent, dropout = assign_class_and_times(
        rec.arm, scenario.control, scenario.experimental, scenario.monthly_dropout, rng
    )
    return SimulatedTrial(rec.arm, cls, rec.rand_time, latent, dropout, rec.all_rand_time, index)


def _censor(trial: SimulatedTrial, keep: NDArray[np.bool_], cut_time: float, **meta) -> TrialDataset:
    rand = trial.rand_time[keep]
    latent = trial.latent_event_time[keep]
    dropout = trial.dropout_time[keep]
    cured = trial.cured[keep]
    # compare in calendar time so the cutting event itself is never lost to rounding
    event = ~cured & (latent <= dropout) & (rand + latent <= cut_time)
    obs = np.where(event, latent, np.minimum(np.minimum(latent, dropout), cut_time - rand))
    return TrialDataset(
        arm=trial.arm[keep],
        responder_class=trial.responder_class[keep],
        rand_time=rand,
        latent_event_time=latent,
        dropout_time=dropout,
        obs_time=obs,
        event=event,
        cut_time=float(cut_time),
        trial_id=trial.index,
        patient_id=np.flatnonzero(keep),
        **meta,
    )


def event_cut_time(trial: SimulatedTrial, d: int, horizon: float) -> tuple[float, bool]:
    """Calendar time of the d-th event and whether the trial is under-evented."""
    if d < 1:
        raise ValueError("number of events must be at least 1")
    cal = trial.event_calendar_times()
    cal = np.sort(cal[cal <= horizon])
    if len(cal) >= d:
        return float(cal[d - 1]), False
    return float(horizon), True


def cut_at_event_count(trial: SimulatedTrial, d: int, horizon: float = 120.0) -> TrialDataset:
    """Administratively censor at the calendar time of the d-th event."""
    cut, under = event_cut_time(trial, d, horizon)
    keep = trial.rand_time <= cut
    return _censor(trial, keep, cut, cut_rule="event-count", target=int(d), under_evented=under)


def cut_at_calendar(trial: SimulatedTrial, calendar_time: float) -> TrialDataset:
    keep = trial.rand_time <= calendar_time
    return _censor(trial, keep, calendar_time, cut_rule="calendar")


def cut_at_evaluable_count(
    trial: SimulatedTrial, n_evaluable: int, assessment_lag: float = 2.0, decision_lag: float = 1.0
) -> tuple[TrialDataset, float]:
    """Interim dataset of the first ``n_evaluable`` eligible patients.

    The interim data cut is ``assessment_lag`` months after the n-th patient
    is randomized; the decision follows ``decision_lag`` months later.
    Recruitment is not paused, so later patients exist in the trial but are
    not part of the returned dataset.
    """
    if n_evaluable < 1:
        raise ValueError("n_evaluable must be at least 1")
    if len(trial) < n_evaluable:
        raise ValueError(f"only {len(trial)} eligible patients recruited, {n_evaluable} required")
    keep = np.zeros(len(trial), dtype=bool)
    keep[:n_evaluable] = True
    cutoff = float(trial.rand_time[n_evaluable - 1]) + assessment_lag
    data = _censor(trial, keep, cutoff, cut_rule="evaluable-count", target=int(n_evaluable))
    return data, cutoff + decision_lag


class TrialBatch:
    """Fixed-width stack of trials for vectorised event-count cuts.

    Rows are padded to the scenario's maximum number of randomized patients so
    that per-row reductions do not depend on which trials share a batch.
    """

    def __init__(self, trials: Sequence[SimulatedTrial], width: int, horizon: float):
        m = len(trials)
        self.horizon = float(horizon)
        self.rand = np.full((m, width), np.inf)
        self.latent = np.full((m, width), np.inf)
        self.dropout = np.full((m, width), np.inf)
        self.arm = np.zeros((m, width), dtype=np.int8)
        self.valid = np.zeros((m, width), dtype=bool)
        self.cured = np.zeros((m, width), dtype=bool)
        for i, tr in enumerate(trials):
            k = len(tr)
            self.rand[i, :k] = tr.rand_time
            self.latent[i, :k] = tr.latent_event_time
            self.dropout[i, :k] = tr.dropout_time
            self.arm[i, :k] = tr.arm
            self.valid[i, :k] = True
            self.cured[i, :k] = tr.cured
        cal = np.where(
            self.valid & ~self.cured & (self.latent <= self.dropout), self.rand + self.latent, np.inf
        )
        cal[cal > self.horizon] = np.inf
        self.sorted_event_times = np.sort(cal, axis=1)
        self.max_events = np.isfinite(self.sorted_event_times).sum(axis=1)

    def __len__(self) -> int:
        return self.rand.shape[0]

    def cut_times(self, d: int) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
        """Per-row cut time at d events and the under-evented flag."""
        if d < 1:
            raise ValueError("number of events must be at least 1")
        under = self.max_events < d
        if d > self.sorted_event_times.shape[1]:
            return np.full(len(self), self.horizon), np.ones(len(self), dtype=bool)
        cut = np.where(under, self.horizon, self.sorted_event_times[:, d - 1])
        return cut, under

    def cut(self, d: int):
        """Censored arrays at the d-th event of every row.

        Returns ``(time, event, experimental, control, cut_time, under_evented)``;
        patients outside the cut have ``time = inf`` and both arm masks false.
        """
        cut, under = self.cut_times(d)
        keep = self.valid & (self.rand <= cut[:, None])
        event = keep & ~self.cured & (self.latent <= self.dropout) & (self.rand + self.latent <= cut[:, None])
        obs = np.where(event, self.latent, np.minimum(np.minimum(self.latent, self.dropout), cut[:, None] - self.rand))
        time = np.where(keep, obs, np.inf)
        exp = keep & (self.arm == Arm.EXPERIMENTAL)
        ctl = keep & (self.arm == Arm.CONTROL)
        return time, event, exp, ctl, cut, under
