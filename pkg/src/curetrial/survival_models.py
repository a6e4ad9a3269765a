"""Event-time laws for two-arm trials with a cure proportion.

Three families are provided:

* :class:`ExponentialLaw` -- constant hazard.
* :class:`CureMixtureLaw` -- ``S(t) = p + (1 - p) S*(t)`` with an arbitrary
  uncured law ``S*``.
* :class:`MechanisticArmLaw` -- non-responders, short-term responders and
  long-term (cured) responders, linked through the probability of a complete
  response (CR).

All laws are immutable and hold no random state; samplers take the uniform
draw as an argument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "CURED",
    "CURED_HORIZON",
    "CuredMarker",
    "InCuredMassError",
    "SurvivalDistribution",
    "ExponentialLaw",
    "CureMixtureLaw",
    "FiniteMixtureLaw",
    "MechanisticArmLaw",
    "survival_at",
    "hazard_at",
    "hazard_ratio_curve",
    "inverse_survival",
    "sample_event_time",
    "mechanistic_marginal",
    "calibrate_uncured_law",
    "cr_odds_transform",
    "odds_ratio",
    "monthly_dropout_rate",
]

# Event time imputed for cured patients, in months.  Anything beyond the
# trial horizon behaves identically.
CURED_HORIZON = 10_000.0


class CuredMarker:
    """Singleton returned by samplers when the draw falls in the cured mass."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "CURED"

    def __reduce__(self):
        return (CuredMarker, ())


CURED = CuredMarker()


class InCuredMassError(ValueError):
    """Raised when a survival level lies at or below the cure proportion."""


def _log_mix(weights: Sequence[float], logs: Sequence[NDArray]) -> NDArray:
    # log(sum_k w_k exp(logs_k)), skipping zero weights
    terms = [math.log(w) + lg for w, lg in zip(weights, logs) if w > 0]
    if not terms:
        return np.full(np.shape(logs[0]), -np.inf)
    return np.logaddexp.reduce(np.stack(np.broadcast_arrays(*terms)), axis=0)


class SurvivalDistribution:
    """Base class for event-time laws on months since randomization.

    Subclasses implement :meth:`sf` and :meth:`pdf`; :meth:`log_sf` and
    :meth:`log_pdf` should be overridden where a stable closed form exists,
    because :meth:`hazard` is evaluated in log space.
    """

    @property
    def cure_proportion(self) -> float:
        return 0.0

    def sf(self, t: ArrayLike) -> NDArray:
        raise NotImplementedError

    def pdf(self, t: ArrayLike) -> NDArray:
        raise NotImplementedError

    def log_sf(self, t: ArrayLike) -> NDArray:
        with np.errstate(divide="ignore"):
            return np.log(self.sf(t))

    def log_pdf(self, t: ArrayLike) -> NDArray:
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(t))

    def hazard(self, t: ArrayLike) -> NDArray:
        lp = self.log_pdf(t)
        ls = self.log_sf(t)
        with np.errstate(invalid="ignore"):
            return np.where(np.isneginf(lp), 0.0, np.exp(lp - ls))

    def isf(self, q: ArrayLike) -> NDArray:
        """Inverse survival function for ``q`` in ``(cure_proportion, 1]``."""
        return self._isf_bisect(q)

    def _isf_bisect(self, q: ArrayLike, rtol: float = 1e-14) -> NDArray:
        q = np.asarray(q, dtype=float)
        lo = np.zeros_like(q)
        hi = np.ones_like(q)
        # grow the bracket until S(hi) < q everywhere
        for _ in range(2000):
            short = self.sf(hi) >= q
            if not short.any():
                break
            hi = np.where(short, hi * 2.0, hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            above = self.sf(mid) >= q
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
            if np.all(hi - lo <= rtol * hi):
                break
        out = 0.5 * (lo + hi)
        return np.where(q >= 1.0, 0.0, out)


@dataclass(frozen=True)
class ExponentialLaw(SurvivalDistribution):
    """Exponential event times with ``rate`` events per month."""

    rate: float

    def __post_init__(self):
        if not (math.isfinite(self.rate) and self.rate > 0):
            raise ValueError(f"rate must be positive and finite, got {self.rate!r}")

    @classmethod
    def from_median(cls, median: float) -> "ExponentialLaw":
        if not (math.isfinite(median) and median > 0):
            raise ValueError(f"median must be positive and finite, got {median!r}")
        return cls(math.log(2.0) / median)

    @property
    def median(self) -> float:
        return math.log(2.0) / self.rate

    def sf(self, t):
        return np.exp(-self.rate * np.asarray(t, dtype=float))

    def pdf(self, t):
        return self.rate * np.exp(-self.rate * np.asarray(t, dtype=float))

    def log_sf(self, t):
        return -self.rate * np.asarray(t, dtype=float)

    def log_pdf(self, t):
        return math.log(self.rate) - self.rate * np.asarray(t, dtype=float)

    def hazard(self, t):
        return np.full(np.shape(t), self.rate, dtype=float)

    def isf(self, q):
        q = np.asarray(q, dtype=float)
        with np.errstate(divide="ignore"):
            return -np.log(q) / self.rate


@dataclass(frozen=True)
class FiniteMixtureLaw(SurvivalDistribution):
    """Weighted mixture of proper (cure-free) laws; weights sum to one."""

    weights: tuple[float, ...]
    components: tuple[SurvivalDistribution, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.components) or not self.weights:
            raise ValueError("weights and components must be non-empty and of equal length")
        if any(w < 0 for w in self.weights):
            raise ValueError("mixture weights must be nonnegative")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError(f"mixture weights must sum to 1, got {sum(self.weights)!r}")
        if any(c.cure_proportion > 0 for c in self.components):
            raise ValueError("mixture components must not carry a cure proportion")

    def sf(self, t):
        t = np.asarray(t, dtype=float)
        return sum(w * c.sf(t) for w, c in zip(self.weights, self.components))

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return sum(w * c.pdf(t) for w, c in zip(self.weights, self.components))

    def log_sf(self, t):
        t = np.asarray(t, dtype=float)
        return _log_mix(self.weights, [c.log_sf(t) for c in self.components])

    def log_pdf(self, t):
        t = np.asarray(t, dtype=float)
        return _log_mix(self.weights, [c.log_pdf(t) for c in self.components])


@dataclass(frozen=True)
class CureMixtureLaw(SurvivalDistribution):
    """Mixture cure model ``S(t) = p + (1 - p) S*(t)``."""

    cure_fraction: float
    uncured_law: SurvivalDistribution

    def __post_init__(self):
        if not (0.0 <= self.cure_fraction < 1.0):
            raise ValueError(f"cure proportion must lie in [0, 1), got {self.cure_fraction!r}")
        if self.uncured_law.cure_proportion > 0:
            raise ValueError("uncured law must itself be cure-free")

    @property
    def cure_proportion(self) -> float:
        return self.cure_fraction

    def sf(self, t):
        p = self.cure_fraction
        return p + (1.0 - p) * self.uncured_law.sf(t)

    def pdf(self, t):
        return (1.0 - self.cure_fraction) * self.uncured_law.pdf(t)

    def log_sf(self, t):
        p = self.cure_fraction
        return _log_mix((p, 1.0 - p), [np.zeros(np.shape(t)), self.uncured_law.log_sf(t)])

    def log_pdf(self, t):
        return math.log1p(-self.cure_fraction) + self.uncured_law.log_pdf(t)

    def isf(self, q):
        p = self.cure_fraction
        q = np.asarray(q, dtype=float)
        return self.uncured_law.isf((q - p) / (1.0 - p))


@dataclass(frozen=True)
class MechanisticArmLaw(SurvivalDistribution):
    """One arm of the response-linked survival model.

    A patient reaches CR with probability ``cr_probability``; a CR patient is a
    long-term responder (cured, event time imputed at ``longterm_horizon``)
    with probability ``longterm_given_cr`` and otherwise follows
    ``shortterm_law``.  Patients without CR follow ``nonresponder_law``.

    The marginal survival is
    ``p_CR (p_L + (1 - p_L) S_S(t)) + (1 - p_CR) S_N(t)``.
    """

    cr_probability: float
    longterm_given_cr: float
    nonresponder_law: SurvivalDistribution
    shortterm_law: SurvivalDistribution
    longterm_horizon: float = CURED_HORIZON

    def __post_init__(self):
        for name in ("cr_probability", "longterm_given_cr"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")
        if self.nonresponder_law.cure_proportion > 0 or self.shortterm_law.cure_proportion > 0:
            raise ValueError("non-responder and short-term laws must be cure-free")
        if not self.longterm_horizon > 0:
            raise ValueError("longterm_horizon must be positive")

    @property
    def cure_proportion(self) -> float:
        return self.cr_probability * self.longterm_given_cr

    @property
    def class_probabilities(self) -> tuple[float, float, float]:
        """Probabilities of (non-responder, short-term, long-term)."""
        pcr, pl = self.cr_probability, self.longterm_given_cr
        return (1.0 - pcr, pcr * (1.0 - pl), pcr * pl)

    def sf(self, t):
        t = np.asarray(t, dtype=float)
        pcr, pl = self.cr_probability, self.longterm_given_cr
        return pcr * (pl + (1.0 - pl) * self.shortterm_law.sf(t)) + (1.0 - pcr) * self.nonresponder_law.sf(t)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        _, w_s, _ = self.class_probabilities
        w_n = 1.0 - self.cr_probability
        return w_s * self.shortterm_law.pdf(t) + w_n * self.nonresponder_law.pdf(t)

    def log_sf(self, t):
        t = np.asarray(t, dtype=float)
        w_n, w_s, w_l = self.class_probabilities
        return _log_mix(
            (w_l, w_s, w_n),
            [np.zeros(t.shape), self.shortterm_law.log_sf(t), self.nonresponder_law.log_sf(t)],
        )

    def log_pdf(self, t):
        t = np.asarray(t, dtype=float)
        w_n, w_s, _ = self.class_probabilities
        return _log_mix((w_s, w_n), [self.shortterm_law.log_pdf(t), self.nonresponder_law.log_pdf(t)])

    def isf(self, q):
        return mechanistic_marginal(self).isf(q)


def _check_time(t) -> NDArray:
    arr = np.asarray(t, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise ValueError(f"time must be nonnegative, got {t!r}")
    return arr


def _scalar_or_array(x: NDArray):
    return float(x) if np.ndim(x) == 0 else x


def survival_at(law: SurvivalDistribution, t):
    """Survival probability ``S(t)``; accepts scalars or arrays."""
    return _scalar_or_array(law.sf(_check_time(t)))


def hazard_at(law: SurvivalDistribution, t):
    """Hazard ``h(t)`` in events per month; rejects points where ``S(t) = 0``."""
    arr = _check_time(t)
    if np.any(np.isneginf(law.log_sf(arr))):
        raise ValueError("hazard undefined where survival is zero")
    return _scalar_or_array(law.hazard(arr))


def hazard_ratio_curve(experimental: SurvivalDistribution, control: SurvivalDistribution, t):
    """Pointwise hazard ratio ``h_experimental(t) / h_control(t)``."""
    h_exp = np.asarray(hazard_at(experimental, t), dtype=float)
    h_ctl = np.asarray(hazard_at(control, t), dtype=float)
    if np.any(h_ctl <= 0):
        raise ValueError("control hazard is zero; hazard ratio undefined")
    return _scalar_or_array(h_exp / h_ctl)


def inverse_survival(law: SurvivalDistribution, q: float) -> float:
    """Time ``t`` with ``S(t) = q`` for ``q`` in ``(p, 1]``.

    Raises :class:`InCuredMassError` for ``q <= p``; the caller decides how to
    represent cured patients.
    """
    q = float(q)
    if not q <= 1.0:
        raise ValueError(f"survival level must not exceed 1, got {q!r}")
    if q <= law.cure_proportion:
        raise InCuredMassError(f"level {q!r} lies in the cured mass (p = {law.cure_proportion!r})")
    return float(law.isf(q))


def sample_event_time(law: SurvivalDistribution, u: float):
    """Map one uniform draw to an event time, or :data:`CURED`."""
    u = float(u)
    if not 0.0 < u < 1.0:
        raise ValueError(f"uniform draw must lie in (0, 1), got {u!r}")
    if u <= law.cure_proportion:
        return CURED
    return inverse_survival(law, u)


def calibrate_uncured_law(arm: MechanisticArmLaw) -> SurvivalDistribution:
    """Uncured law ``S* = (S_bar - p) / (1 - p)`` implied by a mechanistic arm.

    With ``p = p_CR p_L`` this is the mixture of the short-term and
    non-responder laws with weights ``p_CR (1 - p_L) / (1 - p)`` and
    ``(1 - p_CR) / (1 - p)``.
    """
    p = arm.cure_proportion
    if p >= 1.0:
        raise ValueError("every patient is cured; no uncured law exists")
    w_n, w_s, _ = arm.class_probabilities
    pairs = [(w / (1.0 - p), law) for w, law in ((w_s, arm.shortterm_law), (w_n, arm.nonresponder_law)) if w > 0]
    if len(pairs) == 1:
        return pairs[0][1]
    weights = tuple(w for w, _ in pairs)
    # renormalise away rounding so the mixture validates
    weights = (weights[0], 1.0 - weights[0])
    return FiniteMixtureLaw(weights, tuple(law for _, law in pairs))


def mechanistic_marginal(arm: MechanisticArmLaw) -> CureMixtureLaw:
    """Marginal survival of a mechanistic arm, as a cure mixture."""
    return CureMixtureLaw(arm.cure_proportion, calibrate_uncured_law(arm))


def cr_odds_transform(p_control: float, odds_ratio: float) -> float:
    """Experimental response probability implied by an odds ratio."""
    if not 0.0 < p_control < 1.0:
        raise ValueError(f"control probability must lie in (0, 1), got {p_control!r}")
    if not (odds_ratio > 0 and math.isfinite(odds_ratio)):
        raise ValueError(f"odds ratio must be positive, got {odds_ratio!r}")
    o = odds_ratio * p_control / (1.0 - p_control)
    return o / (1.0 + o)


def odds_ratio(p_experimental: float, p_control: float) -> float:
    return (p_experimental / (1.0 - p_experimental)) / (p_control / (1.0 - p_control))


def monthly_dropout_rate(annual_rate: float) -> float:
    """Monthly dropout probability whose 12-month compounding gives ``annual_rate``."""
    if not 0.0 <= annual_rate < 1.0:
        raise ValueError(f"annual dropout rate must lie in [0, 1), got {annual_rate!r}")
    return -math.expm1(math.log1p(-annual_rate) / 12.0)
