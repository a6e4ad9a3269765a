"""Monte Carlo power over an event-count grid and minimal-event search.

Every grid point is evaluated on the same simulated trials (each trial is
cut at every d), so power and analysis timing are compared on common random
numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._parallel import map_chunks
from .stats import (
    MilestoneNotEstimableError,
    logrank_batch,
    logrank_z,
    milestone_test,
    schoenfeld_events,
    two_sided_p,
)
from .trial_engine import ScenarioConfig, TrialBatch, cut_at_event_count, simulate_trial

__all__ = [
    "PowerEntry",
    "PowerGridResult",
    "EventSearchResult",
    "MilestonePowerResult",
    "estimate_power",
    "power_grid",
    "find_min_events",
    "milestone_power",
    "mc_se",
    "quantiles_with_inf",
]


def mc_se(p: float, trials: int) -> float:
    """Binomial Monte Carlo standard error of an estimated proportion."""
    return math.sqrt(p * (1.0 - p) / trials)


def quantiles_with_inf(x: np.ndarray, probs: Sequence[float]) -> list[float]:
    """Linear-interpolation quantiles where ``inf`` entries sort last.

    Any quantile that touches an infinite order statistic is ``inf``.
    """
    xs = np.sort(np.asarray(x, dtype=float))
    n = len(xs)
    out = []
    for p in probs:
        h = (n - 1) * p
        lo = int(math.floor(h))
        frac = h - lo
        if frac == 0 or lo + 1 >= n:
            out.append(float(xs[lo]))
        elif math.isinf(xs[lo + 1]):
            out.append(math.inf)
        else:
            out.append(float(xs[lo] + frac * (xs[lo + 1] - xs[lo])))
    return out


@dataclass(frozen=True)
class PowerEntry:
    d: int
    power: float
    mc_se: float
    t25: float
    t50: float
    t75: float
    under_evented_frac: float


@dataclass
class PowerGridResult:
    entries: list[PowerEntry]
    trials: int
    seed: int
    scenario: ScenarioConfig
    scenario_id: str = ""

    def entry(self, d: int) -> PowerEntry:
        for e in self.entries:
            if e.d == d:
                return e
        raise KeyError(d)

    @property
    def ds(self) -> list[int]:
        return [e.d for e in self.entries]


def _grid_chunk(start: int, stop: int, scenario: ScenarioConfig, seed: int, ds: Sequence[int]):
    trials = [simulate_trial(scenario, seed, i) for i in range(start, stop)]
    batch = TrialBatch(trials, scenario.recruitment.max_patients, scenario.horizon)
    reject = np.zeros((len(ds), len(trials)), dtype=bool)
    cut = np.zeros((len(ds), len(trials)))
    under = np.zeros((len(ds), len(trials)), dtype=bool)
    for k, d in enumerate(ds):
        time, event, exp, ctl, cut_k, under_k = batch.cut(d)
        z = logrank_z(logrank_batch(time, event, exp, ctl))
        # under-evented trials count as non-rejections
        reject[k] = (two_sided_p(z) < scenario.alpha) & ~under_k
        cut[k] = np.where(under_k, np.inf, cut_k)
        under[k] = under_k
    return reject, cut, under


def power_grid(
    scenario: ScenarioConfig, ds: Iterable[int], trials: int, seed: int, threads: int = 1
) -> PowerGridResult:
    """Logrank power and time to the d-th event for each d in ``ds``."""
    ds = sorted({int(d) for d in ds})
    if not ds or ds[0] < 1:
        raise ValueError("event counts must be positive")
    if trials < 1:
        raise ValueError("number of trials must be at least 1")
    chunks = map_chunks(_grid_chunk, trials, threads, scenario=scenario, seed=seed, ds=ds)
    reject = np.concatenate([c[0] for c in chunks], axis=1)
    cut = np.concatenate([c[1] for c in chunks], axis=1)
    under = np.concatenate([c[2] for c in chunks], axis=1)
    entries = []
    for k, d in enumerate(ds):
        p = float(reject[k].mean())
        t25, t50, t75 = quantiles_with_inf(cut[k], (0.25, 0.5, 0.75))
        entries.append(PowerEntry(d, p, mc_se(p, trials), t25, t50, t75, float(under[k].mean())))
    return PowerGridResult(entries, trials, seed, scenario, scenario.name)


def estimate_power(scenario: ScenarioConfig, d: int, trials: int, seed: int, threads: int = 1) -> PowerEntry:
    """Rejection fraction of the logrank test with each trial cut at ``d`` events."""
    if d < 1:
        raise ValueError("number of events must be at least 1")
    return power_grid(scenario, [d], trials, seed, threads).entries[0]


@dataclass
class EventSearchResult:
    d: int | None
    reached: bool
    target_power: float
    d_lo: int
    d_hi: int
    grid: PowerGridResult

    @property
    def power_at_hi(self) -> float | None:
        try:
            return self.grid.entry(self.d_hi).power
        except KeyError:
            return None


def default_bounds(scenario: ScenarioConfig, target_power: float) -> tuple[int, int]:
    """Schoenfeld's d at the planning hazard ratio, and twice that."""
    hr = scenario.planning_hazard_ratio()
    if not math.isfinite(hr) or hr <= 0 or hr == 1.0:
        raise ValueError(f"cannot derive a Schoenfeld lower bound from hazard ratio {hr!r}; pass d_lo explicitly")
    d0 = schoenfeld_events(scenario.alpha, target_power, hr, scenario.allocation_ratio)
    return d0, 2 * d0


def find_min_events(
    scenario: ScenarioConfig,
    trials: int,
    seed: int,
    target_power: float | None = None,
    d_lo: int | None = None,
    d_hi: int | None = None,
    threads: int = 1,
    block: int = 16,
) -> EventSearchResult:
    """Smallest d in ``[d_lo, d_hi]`` whose estimated power reaches the target.

    The grid (step 1) is scanned upwards in growing blocks; every block reuses
    the same simulated trials, so the answer equals the one from evaluating
    the whole grid at once.  When the target is never reached, ``d`` is
    ``None`` and the grid includes ``d_hi``.
    """
    target = scenario.target_power if target_power is None else target_power
    if not 0.0 < target < 1.0:
        raise ValueError("target power must lie in (0, 1)")
    if d_lo is None or d_hi is None:
        lo0, hi0 = default_bounds(scenario, target)
        d_lo = lo0 if d_lo is None else d_lo
        d_hi = max(hi0, d_lo) if d_hi is None else d_hi
    if not 1 <= d_lo <= d_hi:
        raise ValueError(f"need 1 <= d_lo <= d_hi, got {d_lo}, {d_hi}")

    entries: list[PowerEntry] = []
    start = d_lo
    size = block
    found = None
    while start <= d_hi and found is None:
        stop = min(start + size - 1, d_hi)
        res = power_grid(scenario, range(start, stop + 1), trials, seed, threads)
        entries.extend(res.entries)
        for e in res.entries:
            if e.power >= target:
                found = e.d
                break
        start = stop + 1
        size *= 2
    grid = PowerGridResult(entries, trials, seed, scenario, scenario.name)
    return EventSearchResult(found, found is not None, target, d_lo, d_hi, grid)


@dataclass
class MilestonePowerResult:
    t0: list[float]
    power: list[float]
    mc_se: list[float]
    not_estimable_frac: list[float]
    d: int
    transform: str
    trials: int
    seed: int
    scenario: ScenarioConfig = field(repr=False)


def _milestone_chunk(start, stop, scenario: ScenarioConfig, seed: int, d: int, t0s, transform: str):
    reject = np.zeros((len(t0s), stop - start), dtype=bool)
    missing = np.zeros((len(t0s), stop - start), dtype=bool)
    for j, i in enumerate(range(start, stop)):
        data = cut_at_event_count(simulate_trial(scenario, seed, i), d, scenario.horizon)
        for k, t0 in enumerate(t0s):
            try:
                res = milestone_test(data, t0, transform, scenario.alpha)
            except MilestoneNotEstimableError:
                missing[k, j] = True
                continue
            reject[k, j] = res.reject
    return reject, missing


def milestone_power(
    scenario: ScenarioConfig,
    d: int,
    t0s: Sequence[float],
    trials: int,
    seed: int,
    transform: str = "cloglog",
    threads: int = 1,
) -> MilestonePowerResult:
    """Power of the fixed-time survival comparison at each ``t0``.

    Each trial is analysed at its d-th event; a milestone beyond an arm's
    follow-up counts as a non-rejection.
    """
    t0s = [float(t) for t in t0s]
    chunks = map_chunks(
        _milestone_chunk, trials, threads, scenario=scenario, seed=seed, d=d, t0s=t0s, transform=transform
    )
    reject = np.concatenate([c[0] for c in chunks], axis=1)
    missing = np.concatenate([c[1] for c in chunks], axis=1)
    power = [float(x) for x in reject.mean(axis=1)]
    return MilestonePowerResult(
        t0=t0s,
        power=power,
        mc_se=[mc_se(p, trials) for p in power],
        not_estimable_frac=[float(x) for x in missing.mean(axis=1)],
        d=d,
        transform=transform,
        trials=trials,
        seed=seed,
        scenario=scenario,
    )
