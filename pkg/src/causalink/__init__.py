"""Causal inference for record-linked data with mismatch error.

Estimates average treatment effects when linked records may pair covariates
with the wrong unit's outcome or exposure: EM-based imputation of latent
match-status indicators, adjusted propensity-score / outcome / DR-type
estimators, sandwich inference, analytic bias formulas, and a Monte Carlo
harness.
"""

from .data_model import (EstimateReport, LinkedDataset, LinkedRecord,
                         MismatchPosterior, Scenario, Theta)
from .inference import LambdaSpec

__version__ = "0.1.0"

__all__ = [
    "EstimateReport", "LinkedDataset", "LinkedRecord", "MismatchPosterior",
    "Scenario", "Theta", "LambdaSpec", "__version__",
]
