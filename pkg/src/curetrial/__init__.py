"""Simulation tools for two-arm survival trials with a cure proportion and a
response-based futility interim."""

from .survival_models import (
    CURED,
    CURED_HORIZON,
    CureMixtureLaw,
    ExponentialLaw,
    MechanisticArmLaw,
    calibrate_uncured_law,
    cr_odds_transform,
    hazard_at,
    hazard_ratio_curve,
    inverse_survival,
    mechanistic_marginal,
    monthly_dropout_rate,
    sample_event_time,
    survival_at,
)
from .trial_engine import RecruitmentPlan, ScenarioConfig, TrialDataset, simulate_trial
from .stats import logrank_test, km_estimate, milestone_test, cr_odds_ratio, schoenfeld_events, minimal_detectable_hr
from .design_search import estimate_power, find_min_events, power_grid, milestone_power
from .interim import FutilityRule, operating_characteristics, patient_savings

__version__ = "0.1.0"
