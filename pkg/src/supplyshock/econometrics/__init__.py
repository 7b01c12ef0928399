"""Data-side tools: synthetic panels, shift-share shocks, FE regressions, network facts."""

from .facts import (
    GranularResidual,
    SurvivalResult,
    granular_residual,
    persistence_stats,
    stylized_facts,
    survival_stats,
)
from .fixed_effects import FEEstimate, align_to_truth, fe_extract
from .panel import PriceChangePanel, TransactionPanel, price_changes
from .regression import RegressionResult, RegressionSpec, panel_regress
from .shiftshare import ShockSeries, build_shock, expenditure_shares
from .synthetic import ShockProcess, SyntheticPanel, generate_synthetic_panel, plant_response

__all__ = [
    "FEEstimate", "GranularResidual", "PriceChangePanel", "RegressionResult", "RegressionSpec",
    "ShockProcess", "ShockSeries", "SurvivalResult", "SyntheticPanel", "TransactionPanel",
    "align_to_truth", "build_shock", "expenditure_shares", "fe_extract", "generate_synthetic_panel",
    "granular_residual", "panel_regress", "persistence_stats", "plant_response", "price_changes",
    "stylized_facts", "survival_stats",
]
