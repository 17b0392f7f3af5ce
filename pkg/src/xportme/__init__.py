"""Transportability-weighted correction of outcome measurement error."""

__version__ = "0.1.0"

from .core import (EstimateReport, SampleLabel, StackedDataset, StackedRow,
                   validate_dataset)
from .estimators import (corrected_ate, empirical_mu0_bias, naive_ate, naive_mu0,
                         weighted_covariance, weighted_mu0)
from .membership import (TermSet, WeightSet, asmd, balance_table, build_design, dom,
                         fit_membership, make_weights, predict_prob, trim_weights)
from .simulation import ScenarioSpec, run_grid, run_scenario

__all__ = [
    "EstimateReport", "SampleLabel", "StackedDataset", "StackedRow", "validate_dataset",
    "corrected_ate", "empirical_mu0_bias", "naive_ate", "naive_mu0",
    "weighted_covariance", "weighted_mu0",
    "TermSet", "WeightSet", "asmd", "balance_table", "build_design", "dom",
    "fit_membership", "make_weights", "predict_prob", "trim_weights",
    "ScenarioSpec", "run_grid", "run_scenario",
]
