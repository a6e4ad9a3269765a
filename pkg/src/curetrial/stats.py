"""Tests and estimators on trial datasets.

Arm coding follows :class:`curetrial.trial_engine.Arm`: 0 is control and 1 is
experimental.  Signed statistics are oriented so that negative values favour
the experimental arm (fewer observed than expected events).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray
from scipy.special import ndtr, ndtri

from .trial_engine import Arm, TrialDataset

__all__ = [
    "NoInformationError",
    "MilestoneNotEstimableError",
    "TestResult",
    "KMCurve",
    "OddsRatioEstimate",
    "norm_ppf",
    "two_sided_p",
    "logrank_batch",
    "logrank_test",
    "km_estimate",
    "milestone_test",
    "cr_odds_ratio",
    "schoenfeld_events",
    "minimal_detectable_hr",
    "TRANSFORMS",
]


class NoInformationError(ValueError):
    """The pooled data contain no events."""


class MilestoneNotEstimableError(ValueError):
    """The milestone lies beyond the follow-up of an arm."""


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    reject: bool
    effect_estimate: float

    __test__ = False  # keep pytest from collecting this class


def norm_ppf(p: float) -> float:
    return float(ndtri(p))


def two_sided_p(z):
    return 2.0 * ndtr(-np.abs(z))


def _result(z: float, alpha: float, effect: float) -> TestResult:
    p = float(two_sided_p(z))
    return TestResult(float(z), p, p < alpha, float(effect))


# ---------------------------------------------------------------------------
# logrank


class LogrankParts(NamedTuple):
    observed: NDArray[np.float64]
    expected: NDArray[np.float64]
    variance: NDArray[np.float64]


def logrank_batch(time, event, experimental, control) -> LogrankParts:
    """Experimental-arm O, E and hypergeometric V for each row.

    All inputs are 2-d with one trial per row.  Entries that belong to
    neither arm (padding, or patients outside a cut) are ignored; give them
    ``time = inf``.  Tied observation times are grouped.
    """
    time = np.atleast_2d(np.asarray(time, dtype=float))
    event = np.atleast_2d(np.asarray(event, dtype=bool))
    experimental = np.atleast_2d(np.asarray(experimental, dtype=bool))
    control = np.atleast_2d(np.asarray(control, dtype=bool))
    member = experimental | control
    event = event & member

    order = np.argsort(time, axis=1, kind="stable")
    t = np.take_along_axis(time, order, axis=1)
    # one gather for the three flags
    code = event.astype(np.int8) * 4 + (experimental & member).astype(np.int8) * 2 + member.astype(np.int8)
    code = np.take_along_axis(code, order, axis=1)
    ev = (code >= 4).astype(float)
    ex = ((code & 2) > 0).astype(float)
    mb = (code & 1).astype(float)
    ev_ex = ev * ex

    # at-risk counts from position k onwards
    n_risk = np.cumsum(mb[:, ::-1], axis=1)[:, ::-1]
    n1_risk = np.cumsum(ex[:, ::-1], axis=1)[:, ::-1]
    cum_d = np.cumsum(ev, axis=1)
    cum_d1 = np.cumsum(ev_ex, axis=1)

    same_as_prev = np.zeros_like(t, dtype=bool)
    same_as_prev[:, 1:] = (t[:, 1:] == t[:, :-1]) & (mb[:, 1:] > 0)
    if not same_as_prev.any():
        # continuous times: every member is its own risk set
        return _logrank_sums(ev, ev_ex, n_risk, n1_risk)

    width = t.shape[1]
    idx = np.broadcast_to(np.arange(width), t.shape)
    start = np.maximum.accumulate(np.where(same_as_prev, 0, idx), axis=1)
    is_end = np.ones_like(t, dtype=bool)
    is_end[:, :-1] = ~same_as_prev[:, 1:]

    before = start - 1
    prev_d = np.where(before >= 0, np.take_along_axis(cum_d, np.maximum(before, 0), axis=1), 0.0)
    prev_d1 = np.where(before >= 0, np.take_along_axis(cum_d1, np.maximum(before, 0), axis=1), 0.0)
    d = np.where(is_end, cum_d - prev_d, 0.0)
    d1 = np.where(is_end, cum_d1 - prev_d1, 0.0)
    n = np.take_along_axis(n_risk, start, axis=1)
    n1 = np.take_along_axis(n1_risk, start, axis=1)
    return _logrank_sums(d, d1, n, n1)


def _logrank_sums(d, d1, n, n1) -> LogrankParts:
    has = d > 0
    safe_n = np.where(has, n, 1.0)
    frac = n1 / safe_n
    expected = np.where(has, d * frac, 0.0)
    tie = np.where(has & (n > 1), (n - d) / np.where(n > 1, n - 1.0, 1.0), 0.0)
    variance = np.where(has, d * frac * (1.0 - frac) * tie, 0.0)
    return LogrankParts(d1.sum(axis=1), expected.sum(axis=1), variance.sum(axis=1))


def logrank_z(parts: LogrankParts) -> NDArray[np.float64]:
    """Standardised O - E; zero where the variance vanishes."""
    v = parts.variance
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(v > 0, (parts.observed - parts.expected) / np.sqrt(np.where(v > 0, v, 1.0)), 0.0)


def logrank_test(data: TrialDataset, alpha: float = 0.05) -> TestResult:
    """Two-sided unweighted logrank test, experimental versus control.

    ``effect_estimate`` is the one-step hazard-ratio approximation
    ``exp((O - E) / V)``.
    """
    if data.n_events == 0:
        raise NoInformationError("no events in the pooled data")
    exp = data.arm == Arm.EXPERIMENTAL
    ctl = data.arm == Arm.CONTROL
    parts = logrank_batch(data.obs_time[None], data.event[None], exp[None], ctl[None])
    o, e, v = (float(x[0]) for x in parts)
    if v <= 0:
        return TestResult(0.0, 1.0, False, 1.0)
    z = (o - e) / math.sqrt(v)
    return _result(z, alpha, math.exp((o - e) / v))


# ---------------------------------------------------------------------------
# Kaplan-Meier


@dataclass(frozen=True)
class KMCurve:
    """Product-limit estimate evaluated at the distinct event times.

    ``greenwood_sum`` is the running sum of ``d / (n (n - d))``, i.e. the
    Greenwood variance of ``log S``; ``variance`` is ``S^2`` times it (set to
    0 once ``S`` reaches 0).  ``last_time`` is the largest observed time.
    """

    time: NDArray[np.float64]
    at_risk: NDArray[np.int64]
    events: NDArray[np.int64]
    survival: NDArray[np.float64]
    greenwood_sum: NDArray[np.float64]
    variance: NDArray[np.float64]
    last_time: float

    def _index(self, t: float) -> int:
        return int(np.searchsorted(self.time, t, side="right")) - 1

    def survival_at(self, t: float) -> float:
        i = self._index(t)
        return 1.0 if i < 0 else float(self.survival[i])

    def variance_at(self, t: float) -> float:
        i = self._index(t)
        return 0.0 if i < 0 else float(self.variance[i])

    def log_variance_at(self, t: float) -> float:
        i = self._index(t)
        return 0.0 if i < 0 else float(self.greenwood_sum[i])


def _km(time: NDArray, event: NDArray) -> KMCurve:
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    if len(time) == 0:
        raise ValueError("cannot estimate survival from an empty sample")
    uniq, inverse = np.unique(time, return_inverse=True)
    d_all = np.bincount(inverse, weights=event.astype(float), minlength=len(uniq))
    c_all = np.bincount(inverse, minlength=len(uniq))
    n_all = len(time) - np.concatenate([[0], np.cumsum(c_all)[:-1]])
    has = d_all > 0
    t, d, n = uniq[has], d_all[has], n_all[has]
    surv = np.cumprod(1.0 - d / n)
    with np.errstate(divide="ignore"):
        terms = np.where(n > d, d / (n * np.maximum(n - d, 1)), np.inf)
    gw = np.cumsum(terms)
    with np.errstate(invalid="ignore"):
        var = np.where(surv > 0, surv**2 * gw, 0.0)
    return KMCurve(t, n.astype(np.int64), d.astype(np.int64), surv, gw, var, float(time.max()))


def km_estimate(data: TrialDataset, arm: int) -> KMCurve:
    """Kaplan-Meier curve with Greenwood variance for one arm."""
    m = data.arm_mask(arm)
    if not m.any():
        raise ValueError(f"arm {arm} has no patients")
    return _km(data.obs_time[m], data.event[m])


# ---------------------------------------------------------------------------
# milestone comparison


def _tr_identity(s, g):
    return s, s * s * g


def _tr_log(s, g):
    return math.log(s), g


def _tr_cloglog(s, g):
    ls = math.log(s)
    return math.log(-ls), g / (ls * ls)


def _tr_arcsine(s, g):
    return math.asin(math.sqrt(s)), s * g / (4.0 * (1.0 - s))


TRANSFORMS = {
    "identity": _tr_identity,
    "log": _tr_log,
    "cloglog": _tr_cloglog,
    "arcsine": _tr_arcsine,
}


def milestone_test(data: TrialDataset, t0: float, transform: str = "cloglog", alpha: float = 0.05) -> TestResult:
    """Compare survival at ``t0`` between arms on a transformed scale.

    Variances come from Greenwood's formula by the delta method.  The
    statistic is oriented as control minus experimental on the transformed
    scale; ``effect_estimate`` is ``S_experimental(t0) - S_control(t0)``.
    """
    if transform not in TRANSFORMS:
        raise ValueError(f"unknown transform {transform!r}; choose from {sorted(TRANSFORMS)}")
    if t0 < 0:
        raise ValueError("milestone must be nonnegative")
    fn = TRANSFORMS[transform]
    curves = []
    for arm in (Arm.CONTROL, Arm.EXPERIMENTAL):
        km = km_estimate(data, arm)
        if km.last_time < t0:
            raise MilestoneNotEstimableError(f"milestone {t0} beyond follow-up of arm {arm.name.lower()}")
        curves.append((km.survival_at(t0), km.log_variance_at(t0)))
    (s1, g1), (s2, g2) = curves
    effect = s2 - s1
    if s1 == s2:
        return TestResult(0.0, 1.0, False, effect)
    if min(s1, s2) <= 0.0 or (transform in ("cloglog", "arcsine") and max(s1, s2) >= 1.0):
        # a boundary estimate has zero delta-method variance
        z = math.copysign(math.inf, s1 - s2)
        return _result(z, alpha, effect)
    y1, v1 = fn(s1, g1)
    y2, v2 = fn(s2, g2)
    v = v1 + v2
    if v <= 0:
        z = math.copysign(math.inf, y1 - y2)
    else:
        z = (y1 - y2) / math.sqrt(v)
    return _result(z, alpha, effect)


# ---------------------------------------------------------------------------
# interim odds ratio


class OddsRatioEstimate(NamedTuple):
    estimate: float
    counts: tuple[int, int, int, int]  # (exp CR, exp no CR, ctl CR, ctl no CR)
    corrected: bool


def odds_ratio_from_counts(exp_cr: int, exp_n: int, ctl_cr: int, ctl_n: int) -> OddsRatioEstimate:
    if exp_n <= 0 or ctl_n <= 0:
        raise ValueError("both arms need at least one patient")
    a, b, c, d = exp_cr, exp_n - exp_cr, ctl_cr, ctl_n - ctl_cr
    corrected = min(a, b, c, d) == 0
    if corrected:
        est = ((a + 0.5) * (d + 0.5)) / ((b + 0.5) * (c + 0.5))
    else:
        est = (a * d) / (b * c)
    return OddsRatioEstimate(float(est), (int(a), int(b), int(c), int(d)), corrected)


def cr_odds_ratio(data: TrialDataset) -> OddsRatioEstimate:
    """Sample odds ratio of CR, experimental versus control.

    A table with any empty cell gets 0.5 added to every cell and is flagged
    ``corrected``.
    """
    cr = data.cr_flag
    exp = data.arm == Arm.EXPERIMENTAL
    ctl = data.arm == Arm.CONTROL
    return odds_ratio_from_counts(int(cr[exp].sum()), int(exp.sum()), int(cr[ctl].sum()), int(ctl.sum()))


# ---------------------------------------------------------------------------
# closed forms


def _allocation_fraction(allocation_ratio: float) -> float:
    if not allocation_ratio > 0:
        raise ValueError("allocation ratio must be positive")
    pi = allocation_ratio / (1.0 + allocation_ratio)
    return pi * (1.0 - pi)


def schoenfeld_events(alpha: float, power: float, hr: float, allocation_ratio: float = 1.0) -> int:
    """Events needed by a two-sided logrank test under proportional hazards."""
    if not (hr > 0 and math.isfinite(hr)) or hr == 1.0:
        raise ValueError(f"hazard ratio must be positive and different from 1, got {hr!r}")
    if not 0.0 < power < 1.0:
        raise ValueError("power must lie in (0, 1)")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    z = norm_ppf(1.0 - alpha / 2.0) + norm_ppf(power)
    raw = z * z / (_allocation_fraction(allocation_ratio) * math.log(hr) ** 2)
    # guard against ceil() of values a hair above an integer
    return int(math.ceil(raw - 1e-9))


def minimal_detectable_hr(d: int, allocation_ratio: float = 1.0, alpha: float = 0.05) -> float:
    """Hazard ratio at which a logrank test on ``d`` events is just significant."""
    if d < 1:
        raise ValueError("number of events must be at least 1")
    z = norm_ppf(1.0 - alpha / 2.0)
    return math.exp(-z / math.sqrt(d * _allocation_fraction(allocation_ratio)))
