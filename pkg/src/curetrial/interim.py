"""Futility interim analysis on the CR odds ratio.

The interim decision and the final logrank analysis are taken on the same
simulated trial, so the dependence between response at the interim and
survival at the end carries through to the overall power.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from ._parallel import map_chunks
from .design_search import mc_se, quantiles_with_inf
from .stats import OddsRatioEstimate, cr_odds_ratio, logrank_batch, logrank_z, two_sided_p
from .trial_engine import ScenarioConfig, SimulatedTrial, TrialBatch, cut_at_evaluable_count, simulate_trial

__all__ = [
    "FutilityRule",
    "InterimDecision",
    "OCEntry",
    "OperatingCharacteristics",
    "PatientSavings",
    "DEFAULT_BOUNDARY_GRID",
    "simulate_interim_decision",
    "operating_characteristics",
    "patient_savings",
]

DEFAULT_BOUNDARY_GRID = tuple(round(1.0 + 0.1 * k, 10) for k in range(21))


@dataclass(frozen=True)
class FutilityRule:
    """Pass the interim iff the observed CR odds ratio is strictly above ``boundary``."""

    boundary: float
    n_evaluable: int = 120
    assessment_lag: float = 2.0
    decision_lag: float = 1.0

    def __post_init__(self):
        if not self.boundary > 0:
            raise ValueError("boundary must be positive")
        if self.n_evaluable < 2:
            raise ValueError("n_evaluable must be at least 2")
        if self.assessment_lag < 0 or self.decision_lag < 0:
            raise ValueError("lags must be nonnegative")

    def passes(self, observed_or):
        return np.asarray(observed_or) > self.boundary


class InterimDecision(NamedTuple):
    passed: bool
    observed_or: float
    decision_time: float
    estimate: OddsRatioEstimate


def simulate_interim_decision(trial: SimulatedTrial, rule: FutilityRule) -> InterimDecision:
    data, decision_time = cut_at_evaluable_count(trial, rule.n_evaluable, rule.assessment_lag, rule.decision_lag)
    est = cr_odds_ratio(data)
    return InterimDecision(bool(rule.passes(est.estimate)), est.estimate, decision_time, est)


def _interim_chunk(start, stop, scenario: ScenarioConfig, seed: int, rule: FutilityRule, d: int | None):
    n = stop - start
    or_hat = np.empty(n)
    decision = np.empty(n)
    recruited = np.empty(n, dtype=np.int64)
    trials = []
    for j, i in enumerate(range(start, stop)):
        tr = simulate_trial(scenario, seed, i)
        dec = simulate_interim_decision(tr, rule)
        or_hat[j] = dec.observed_or
        decision[j] = dec.decision_time
        recruited[j] = tr.recruited_by(dec.decision_time)
        trials.append(tr)
    reject = np.zeros(n, dtype=bool)
    under = np.zeros(n, dtype=bool)
    if d is not None:
        batch = TrialBatch(trials, scenario.recruitment.max_patients, scenario.horizon)
        time, event, exp, ctl, _, under = batch.cut(d)
        z = logrank_z(logrank_batch(time, event, exp, ctl))
        reject = (two_sided_p(z) < scenario.alpha) & ~under
    return or_hat, decision, recruited, reject, under


def _simulate(scenario, seed, rule, d, trials, threads, require_cr=True):
    if require_cr and not scenario.is_mechanistic:
        raise ValueError("interim simulation needs mechanistic arm laws (CR must exist)")
    chunks = map_chunks(_interim_chunk, trials, threads, scenario=scenario, seed=seed, rule=rule, d=d)
    return tuple(np.concatenate([c[k] for c in chunks]) for k in range(5))


@dataclass(frozen=True)
class OCEntry:
    x_star: float
    p_stop_alt: float
    p_continue_alt: float
    p_continue_null: float
    p_stop_null: float
    overall_power: float
    overall_power_null: float
    se_p_stop_alt: float
    se_p_continue_null: float
    se_p_stop_null: float
    se_overall_power: float
    se_overall_power_null: float


@dataclass
class OperatingCharacteristics:
    """Interim error probabilities per boundary, with final-analysis power.

    ``power_without_interim`` is the logrank rejection fraction under the
    alternative ignoring the interim; ``p_reject_null`` the same under the
    null.
    """

    entries: list[OCEntry]
    power_without_interim: float
    p_reject_null: float
    d: int
    trials: int
    seed: int
    rule: FutilityRule
    null_scenario: ScenarioConfig = field(repr=False)
    alt_scenario: ScenarioConfig = field(repr=False)
    median_decision_time: float = float("nan")
    median_recruited: float = float("nan")

    def entry(self, x_star: float) -> OCEntry:
        for e in self.entries:
            if abs(e.x_star - x_star) < 1e-9:
                return e
        raise KeyError(x_star)


def operating_characteristics(
    null_scenario: ScenarioConfig,
    alt_scenario: ScenarioConfig,
    boundaries: Sequence[float],
    d: int,
    trials: int,
    seed: int,
    rule: FutilityRule | None = None,
    threads: int = 1,
) -> OperatingCharacteristics:
    """False-positive/false-negative curves and overall power over a boundary grid.

    Both scenarios are simulated with the same seed.  ``rule`` supplies the
    interim size and lags; its ``boundary`` is ignored in favour of
    ``boundaries``.
    """
    rule = rule or FutilityRule(1.0)
    if null_scenario.recruitment != alt_scenario.recruitment or null_scenario.allocation_ratio != alt_scenario.allocation_ratio:
        raise ValueError("null and alternative scenarios must share recruitment and allocation")
    if not boundaries:
        raise ValueError("boundary grid is empty")
    or_alt, dec_alt, rec_alt, rej_alt, _ = _simulate(alt_scenario, seed, rule, d, trials, threads)
    or_null, _, _, rej_null, _ = _simulate(null_scenario, seed, rule, d, trials, threads)

    entries = []
    for x in sorted(float(b) for b in boundaries):
        if not x > 0:
            raise ValueError("boundaries must be positive")
        pass_alt = or_alt > x
        pass_null = or_null > x
        p_stop_alt = float(1.0 - pass_alt.mean())
        p_cont_null = float(pass_null.mean())
        ov = float((pass_alt & rej_alt).mean())
        ov_null = float((pass_null & rej_null).mean())
        entries.append(
            OCEntry(
                x_star=x,
                p_stop_alt=p_stop_alt,
                p_continue_alt=1.0 - p_stop_alt,
                p_continue_null=p_cont_null,
                p_stop_null=1.0 - p_cont_null,
                overall_power=ov,
                overall_power_null=ov_null,
                se_p_stop_alt=mc_se(p_stop_alt, trials),
                se_p_continue_null=mc_se(p_cont_null, trials),
                se_p_stop_null=mc_se(p_cont_null, trials),
                se_overall_power=mc_se(ov, trials),
                se_overall_power_null=mc_se(ov_null, trials),
            )
        )
    return OperatingCharacteristics(
        entries=entries,
        power_without_interim=float(rej_alt.mean()),
        p_reject_null=float(rej_null.mean()),
        d=d,
        trials=trials,
        seed=seed,
        rule=rule,
        null_scenario=null_scenario,
        alt_scenario=alt_scenario,
        median_decision_time=float(np.median(dec_alt)),
        median_recruited=float(np.median(rec_alt)),
    )


@dataclass(frozen=True)
class PatientSavings:
    decision_time: tuple[float, float, float]
    recruited_at_decision: tuple[float, float, float]
    not_recruited_if_stop: tuple[float, float, float]
    total_planned: int
    trials: int
    seed: int


def patient_savings(scenario: ScenarioConfig, rule: FutilityRule, trials: int, seed: int, threads: int = 1) -> PatientSavings:
    """Quartiles of decision time, patients randomized by then, and patients spared by a stop."""
    _, decision, recruited, _, _ = _simulate(scenario, seed, rule, None, trials, threads, require_cr=False)
    total = scenario.recruitment.max_patients
    q = (0.25, 0.5, 0.75)
    return PatientSavings(
        decision_time=tuple(quantiles_with_inf(decision, q)),
        recruited_at_decision=tuple(quantiles_with_inf(recruited, q)),
        not_recruited_if_stop=tuple(quantiles_with_inf(total - recruited, q)),
        total_planned=total,
        trials=trials,
        seed=seed,
    )
