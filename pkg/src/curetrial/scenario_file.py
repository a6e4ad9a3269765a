"""Scenario files, bundled presets and JSON round-tripping of resolved configs.

A scenario file is a flat INI-style text file.  Sections and keys::

    [arms]            model = exponential | cure_mixture | mechanistic
                      <arm>.rate | <arm>.median         (exponential, cure_mixture)
                      <arm>.cure                        (cure_mixture)
                      <arm>.p_cr, <arm>.p_l,
                      <arm>.nonresponder_rate | <arm>.nonresponder_median,
                      <arm>.shortterm_rate | <arm>.shortterm_median  (mechanistic)
                      experimental.cr_odds_ratio        (instead of experimental.p_cr)
                      experimental.hazard_ratio         (scales control rates)
    [mechanistic]     mechanistic arm keys as above, for the interim model
    [recruitment]     monthly = "12x15, 17x15"; cap; prevalence
    [dropout]         annual | monthly, or <arm>.annual | <arm>.monthly
    [design]          alpha, target_power, allocation_ratio, horizon,
                      events, hazard_ratio
    [interim]         n_evaluable, assessment_lag, decision_lag, boundary,
                      boundary_grid = "start:stop:step" or a comma list

``<arm>`` is ``control`` or ``experimental``.  Medians are converted to
rates with ``ln 2 / median``.
"""

from __future__ import annotations

import configparser
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .interim import DEFAULT_BOUNDARY_GRID, FutilityRule
from .survival_models import (
    CureMixtureLaw,
    ExponentialLaw,
    FiniteMixtureLaw,
    MechanisticArmLaw,
    SurvivalDistribution,
    cr_odds_transform,
    monthly_dropout_rate,
)
from .trial_engine import RecruitmentPlan, ScenarioConfig

__all__ = [
    "ScenarioError",
    "ScenarioBundle",
    "load_scenario",
    "parse_scenario_text",
    "preset_names",
    "bundle_to_dict",
    "bundle_from_dict",
    "law_to_dict",
    "law_from_dict",
    "scenario_to_dict",
    "scenario_from_dict",
]

ARMS = ("control", "experimental")


class ScenarioError(ValueError):
    """Invalid scenario file; the message names the offending key."""


@dataclass
class ScenarioBundle:
    """Everything a scenario file resolves to.

    ``sample_size`` drives power and event-count work; ``mechanistic``
    (if present) drives the interim analysis.
    """

    name: str
    sample_size: ScenarioConfig
    mechanistic: ScenarioConfig | None = None
    events: int | None = None
    rule: FutilityRule | None = None
    boundary_grid: tuple[float, ...] = field(default=DEFAULT_BOUNDARY_GRID)

    def interim_scenarios(self) -> tuple[ScenarioConfig, ScenarioConfig]:
        """(null, alternative) mechanistic scenarios for the interim."""
        if self.mechanistic is not None:
            alt = self.mechanistic
        elif self.sample_size.is_mechanistic:
            alt = self.sample_size
        else:
            raise ScenarioError("[mechanistic]: interim analysis needs a mechanistic model")
        return alt.null(), alt


# ---------------------------------------------------------------------------
# parsing helpers


class _Section:
    """Key access that records which keys were consumed."""

    def __init__(self, name: str, items: dict[str, str]):
        self.name = name
        self.items = items
        self.used: set[str] = set()

    def __contains__(self, key):
        return key in self.items

    def raw(self, key: str, default=None):
        if key not in self.items:
            if default is _REQUIRED:
                raise ScenarioError(f"[{self.name}] {key}: missing required key")
            return default
        self.used.add(key)
        return self.items[key]

    def float(self, key: str, default=None):
        v = self.raw(key, default)
        if v is None or not isinstance(v, str):
            return v
        try:
            return float(v)
        except ValueError:
            raise ScenarioError(f"[{self.name}] {key}: expected a number, got {v!r}") from None

    def int(self, key: str, default=None):
        v = self.float(key, default)
        if v is None:
            return None
        if v != int(v):
            raise ScenarioError(f"[{self.name}] {key}: expected an integer, got {v!r}")
        return int(v)

    def check_unused(self):
        extra = sorted(set(self.items) - self.used)
        if extra:
            raise ScenarioError(f"[{self.name}] {extra[0]}: unknown key")


_REQUIRED = object()


def _rate(sec: _Section, prefix: str, required: bool = True):
    rk = f"{prefix}rate"
    mk = f"{prefix}median"
    if rk in sec and mk in sec:
        raise ScenarioError(f"[{sec.name}] {mk}: rate and median are mutually exclusive")
    if rk in sec:
        r = sec.float(rk)
    elif mk in sec:
        m = sec.float(mk)
        if not m > 0:
            raise ScenarioError(f"[{sec.name}] {mk}: median must be positive")
        r = math.log(2.0) / m
    elif required:
        raise ScenarioError(f"[{sec.name}] {rk}: missing (give a rate or a median)")
    else:
        return None
    if not (r > 0 and math.isfinite(r)):
        raise ScenarioError(f"[{sec.name}] {rk}: rate must be positive")
    return r


def _prob(sec: _Section, key: str, lo_open=False, hi_open=False, default=_REQUIRED):
    v = sec.float(key, default)
    if v is None:
        return None
    bad = v < 0 or v > 1 or (lo_open and v == 0) or (hi_open and v == 1)
    if bad:
        raise ScenarioError(f"[{sec.name}] {key}: probability out of range: {v!r}")
    return v


def _hazard_multiplier(sec: _Section):
    hr = sec.float("experimental.hazard_ratio")
    if hr is not None and not hr > 0:
        raise ScenarioError(f"[{sec.name}] experimental.hazard_ratio: must be positive")
    return hr


def _simple_arms(sec: _Section, with_cure: bool):
    hr = _hazard_multiplier(sec)
    ctl_rate = _rate(sec, "control.")
    exp_rate = _rate(sec, "experimental.", required=hr is None)
    if exp_rate is not None and hr is not None:
        raise ScenarioError(f"[{sec.name}] experimental.hazard_ratio: conflicts with an explicit experimental rate")
    if exp_rate is None:
        exp_rate = ctl_rate * hr
    laws = []
    for arm, rate in zip(ARMS, (ctl_rate, exp_rate)):
        law = ExponentialLaw(rate)
        if with_cure:
            p = _prob(sec, f"{arm}.cure", hi_open=True)
            law = CureMixtureLaw(p, law)
        laws.append(law)
    return tuple(laws)


def _mechanistic_arms(sec: _Section):
    hr = _hazard_multiplier(sec)
    p_cr_ctl = _prob(sec, "control.p_cr")
    p_l_ctl = _prob(sec, "control.p_l")
    n_ctl = _rate(sec, "control.nonresponder_")
    s_ctl = _rate(sec, "control.shortterm_")

    if "experimental.p_cr" in sec and "experimental.cr_odds_ratio" in sec:
        raise ScenarioError(f"[{sec.name}] experimental.cr_odds_ratio: conflicts with experimental.p_cr")
    if "experimental.cr_odds_ratio" in sec:
        orr = sec.float("experimental.cr_odds_ratio")
        try:
            p_cr_exp = cr_odds_transform(p_cr_ctl, orr)
        except ValueError as exc:
            raise ScenarioError(f"[{sec.name}] experimental.cr_odds_ratio: {exc}") from None
    else:
        p_cr_exp = _prob(sec, "experimental.p_cr")
    p_l_exp = _prob(sec, "experimental.p_l")
    n_exp = _rate(sec, "experimental.nonresponder_", required=hr is None)
    s_exp = _rate(sec, "experimental.shortterm_", required=hr is None)
    if hr is not None:
        if n_exp is not None or s_exp is not None:
            raise ScenarioError(f"[{sec.name}] experimental.hazard_ratio: conflicts with explicit experimental rates")
        n_exp, s_exp = n_ctl * hr, s_ctl * hr
    ctl = MechanisticArmLaw(p_cr_ctl, p_l_ctl, ExponentialLaw(n_ctl), ExponentialLaw(s_ctl))
    exp = MechanisticArmLaw(p_cr_exp, p_l_exp, ExponentialLaw(n_exp), ExponentialLaw(s_exp))
    return ctl, exp


def _arms(sec: _Section, model: str):
    if model == "exponential":
        return _simple_arms(sec, with_cure=False)
    if model == "cure_mixture":
        return _simple_arms(sec, with_cure=True)
    if model == "mechanistic":
        return _mechanistic_arms(sec)
    raise ScenarioError(f"[{sec.name}] model: unknown model family {model!r}")


def _blocks(sec: _Section, key: str):
    text = sec.raw(key, _REQUIRED)
    blocks = []
    for part in text.split(","):
        part = part.strip().lower()
        if not part:
            continue
        try:
            count, months = (int(x) for x in part.split("x"))
        except ValueError:
            raise ScenarioError(f"[{sec.name}] {key}: expected 'count x months' pairs, got {part!r}") from None
        if count < 0 or months < 1:
            raise ScenarioError(f"[{sec.name}] {key}: counts must be >= 0 and months >= 1")
        blocks.append((count, months))
    if not blocks:
        raise ScenarioError(f"[{sec.name}] {key}: empty recruitment plan")
    return blocks


def _dropout(sec: _Section | None):
    if sec is None:
        return (0.0, 0.0)
    out = []
    for arm in ARMS:
        keys = [k for k in (f"{arm}.annual", f"{arm}.monthly", "annual", "monthly") if k in sec]
        if len(keys) == 0:
            out.append(0.0)
            continue
        specific = [k for k in keys if k.startswith(arm)]
        if len(specific) > 1 or (not specific and len(keys) > 1):
            raise ScenarioError(f"[dropout] {keys[-1]}: annual and monthly rates are mutually exclusive")
        key = specific[0] if specific else keys[0]
        v = _prob(sec, key, hi_open=True)
        out.append(monthly_dropout_rate(v) if key.endswith("annual") else v)
    # mark shared keys used even if both arms had specific overrides
    for k in ("annual", "monthly"):
        if k in sec:
            sec.raw(k)
    return tuple(out)


def _grid(sec: _Section, key: str):
    text = sec.raw(key)
    if text is None:
        return DEFAULT_BOUNDARY_GRID
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            n = int(round((stop - start) / step))
            grid = tuple(round(start + k * step, 10) for k in range(n + 1))
        else:
            grid = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ScenarioError(f"[{sec.name}] {key}: expected 'start:stop:step' or a comma list") from None
    if not grid or any(x <= 0 for x in grid):
        raise ScenarioError(f"[{sec.name}] {key}: boundaries must be positive")
    return grid


_SECTIONS = ("arms", "mechanistic", "recruitment", "dropout", "design", "interim")


def parse_scenario_text(text: str, name: str = "scenario") -> ScenarioBundle:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep key case
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(f"malformed scenario file: {exc}") from None
    for s in cp.sections():
        if s not in _SECTIONS:
            raise ScenarioError(f"[{s}]: unknown section")
    secs = {s: _Section(s, dict(cp.items(s))) for s in cp.sections()}
    for required in ("arms", "recruitment"):
        if required not in secs:
            raise ScenarioError(f"[{required}]: missing required section")

    arms = secs["arms"]
    model = arms.raw("model", _REQUIRED).strip()
    control, experimental = _arms(arms, model)

    rec = secs["recruitment"]
    cap = rec.int("cap")
    plan = RecruitmentPlan.from_blocks(_blocks(rec, "monthly"), prevalence=_prob(rec, "prevalence", lo_open=True, default=1.0), total_cap=cap)

    dropout = _dropout(secs.get("dropout"))

    design = secs.get("design") or _Section("design", {})
    alpha = _prob(design, "alpha", lo_open=True, hi_open=True, default=0.05)
    target = _prob(design, "target_power", lo_open=True, hi_open=True, default=0.85)
    ratio = design.float("allocation_ratio", 1.0)
    if not ratio > 0:
        raise ScenarioError("[design] allocation_ratio: must be positive")
    horizon = design.float("horizon", 120.0)
    if not horizon > 0:
        raise ScenarioError("[design] horizon: must be positive")
    events = design.int("events")
    if events is not None and events < 1:
        raise ScenarioError("[design] events: must be at least 1")
    design_hr = design.float("hazard_ratio")
    if design_hr is not None and not (design_hr > 0 and design_hr != 1):
        raise ScenarioError("[design] hazard_ratio: must be positive and different from 1")

    common = dict(
        recruitment=plan,
        allocation_ratio=ratio,
        monthly_dropout=dropout,
        alpha=alpha,
        horizon=horizon,
        target_power=target,
        design_hazard_ratio=design_hr,
    )
    try:
        sample_size = ScenarioConfig(control, experimental, name=name, **common)
        mech = None
        if "mechanistic" in secs:
            mctl, mexp = _mechanistic_arms(secs["mechanistic"])
            mech = ScenarioConfig(mctl, mexp, name=f"{name}-mechanistic", **common)
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"[arms] model: {exc}") from None

    rule = None
    grid = DEFAULT_BOUNDARY_GRID
    if "interim" in secs:
        it = secs["interim"]
        try:
            rule = FutilityRule(
                boundary=it.float("boundary", 2.0),
                n_evaluable=it.int("n_evaluable", 120),
                assessment_lag=it.float("assessment_lag", 2.0),
                decision_lag=it.float("decision_lag", 1.0),
            )
        except ValueError as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"[interim] boundary: {exc}") from None
        grid = _grid(it, "boundary_grid")

    for s in secs.values():
        s.check_unused()
    return ScenarioBundle(name, sample_size, mech, events, rule, grid)


def preset_names() -> list[str]:
    files = resources.files("curetrial").joinpath("presets").iterdir()
    return sorted(p.name[: -len(".scn")] for p in files if p.name.endswith(".scn"))


def load_scenario(source: str | Path) -> ScenarioBundle:
    """Load a scenario file, a bundled preset name, or a JSON result file."""
    path = Path(source)
    if not path.exists() and str(source) in preset_names():
        text = resources.files("curetrial").joinpath("presets", f"{source}.scn").read_text()
        return parse_scenario_text(text, name=str(source))
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {source}")
    text = path.read_text()
    if path.suffix == ".json":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: not valid JSON: {exc}") from None
        if "scenario" not in payload:
            raise ScenarioError(f"{path}: scenario: no embedded scenario in JSON result")
        return bundle_from_dict(payload["scenario"])
    return parse_scenario_text(text, name=path.stem)


# ---------------------------------------------------------------------------
# JSON round trip


def law_to_dict(law: SurvivalDistribution) -> dict:
    if isinstance(law, ExponentialLaw):
        return {"family": "exponential", "rate": law.rate}
    if isinstance(law, CureMixtureLaw):
        return {"family": "cure_mixture", "cure_proportion": law.cure_fraction, "uncured": law_to_dict(law.uncured_law)}
    if isinstance(law, FiniteMixtureLaw):
        return {
            "family": "mixture",
            "weights": list(law.weights),
            "components": [law_to_dict(c) for c in law.components],
        }
    if isinstance(law, MechanisticArmLaw):
        return {
            "family": "mechanistic",
            "cr_probability": law.cr_probability,
            "longterm_given_cr": law.longterm_given_cr,
            "nonresponder": law_to_dict(law.nonresponder_law),
            "shortterm": law_to_dict(law.shortterm_law),
            "longterm_horizon": law.longterm_horizon,
        }
    raise TypeError(f"cannot serialise {type(law).__name__}")


def law_from_dict(d: dict) -> SurvivalDistribution:
    fam = d.get("family")
    if fam == "exponential":
        return ExponentialLaw(d["rate"])
    if fam == "cure_mixture":
        return CureMixtureLaw(d["cure_proportion"], law_from_dict(d["uncured"]))
    if fam == "mixture":
        return FiniteMixtureLaw(tuple(d["weights"]), tuple(law_from_dict(c) for c in d["components"]))
    if fam == "mechanistic":
        return MechanisticArmLaw(
            d["cr_probability"],
            d["longterm_given_cr"],
            law_from_dict(d["nonresponder"]),
            law_from_dict(d["shortterm"]),
            d["longterm_horizon"],
        )
    raise ScenarioError(f"family: unknown law family {fam!r}")


def scenario_to_dict(sc: ScenarioConfig) -> dict:
    return {
        "name": sc.name,
        "control": law_to_dict(sc.control),
        "experimental": law_to_dict(sc.experimental),
        "recruitment": {
            "monthly_targets": list(sc.recruitment.monthly_targets),
            "prevalence": sc.recruitment.prevalence,
            "total_cap": sc.recruitment.total_cap,
        },
        "allocation_ratio": sc.allocation_ratio,
        "monthly_dropout": list(sc.monthly_dropout),
        "alpha": sc.alpha,
        "horizon": sc.horizon,
        "target_power": sc.target_power,
        "design_hazard_ratio": sc.design_hazard_ratio,
    }


def scenario_from_dict(d: dict) -> ScenarioConfig:
    rec = d["recruitment"]
    return ScenarioConfig(
        control=law_from_dict(d["control"]),
        experimental=law_from_dict(d["experimental"]),
        recruitment=RecruitmentPlan(tuple(rec["monthly_targets"]), rec["prevalence"], rec["total_cap"]),
        allocation_ratio=d["allocation_ratio"],
        monthly_dropout=tuple(d["monthly_dropout"]),
        alpha=d["alpha"],
        horizon=d["horizon"],
        target_power=d["target_power"],
        design_hazard_ratio=d["design_hazard_ratio"],
        name=d["name"],
    )


def bundle_to_dict(b: ScenarioBundle) -> dict:
    return {
        "name": b.name,
        "sample_size": scenario_to_dict(b.sample_size),
        "mechanistic": None if b.mechanistic is None else scenario_to_dict(b.mechanistic),
        "events": b.events,
        "interim": None
        if b.rule is None
        else {
            "boundary": b.rule.boundary,
            "n_evaluable": b.rule.n_evaluable,
            "assessment_lag": b.rule.assessment_lag,
            "decision_lag": b.rule.decision_lag,
        },
        "boundary_grid": list(b.boundary_grid),
    }


def bundle_from_dict(d: dict) -> ScenarioBundle:
    try:
        it = d.get("interim")
        return ScenarioBundle(
            name=d["name"],
            sample_size=scenario_from_dict(d["sample_size"]),
            mechanistic=None if d.get("mechanistic") is None else scenario_from_dict(d["mechanistic"]),
            events=d.get("events"),
            rule=None if it is None else FutilityRule(**it),
            boundary_grid=tuple(d.get("boundary_grid") or DEFAULT_BOUNDARY_GRID),
        )
    except KeyError as exc:
        raise ScenarioError(f"{exc.args[0]}: missing from embedded scenario") from None
