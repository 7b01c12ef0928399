"""Firms that search for foreign suppliers: model, simulation, calibration, shocks, econometrics."""

from .calibration import CalibrationProblem, CalibrationResult, calibrate, smm_objective
from .model import DomainError, Firm, FirmOutcome, ModelParams, bundle_price, line_profit, solve_firm, unit_cost
from .population import FirmDraws, MomentSet, Population, compute_moments, simulate_population
from .search import SearchConfig, converge_supplier_set, expected_search_payoff, search_fixed_cost
from .shocks import ImpactCurve, ShockExperiment, apply_top_supplier_shock, sensitivity_sweep

__version__ = "0.1.0"

__all__ = [
    "CalibrationProblem", "CalibrationResult", "DomainError", "Firm", "FirmDraws", "FirmOutcome",
    "ImpactCurve", "ModelParams", "MomentSet", "Population", "SearchConfig", "ShockExperiment",
    "apply_top_supplier_shock", "bundle_price", "calibrate", "compute_moments", "converge_supplier_set",
    "expected_search_payoff", "line_profit", "search_fixed_cost", "sensitivity_sweep",
    "simulate_population", "smm_objective", "solve_firm", "unit_cost",
]
