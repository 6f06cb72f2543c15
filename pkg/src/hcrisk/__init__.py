"""Hierarchical collective-risk models for health-insurance claims.

Six Bayesian models (Gamma, LogNormal or LogT claim sizes with Poisson or
negative binomial counts) fitted by a no-U-turn sampler, with predictive
premiums, VaR/TVaR, DIC/CRPS comparison and a simulation-recovery study.
"""

from ._accel import HAS_NUMBA, backend
from .densities import DomainError, moment_match
from .inference import ChainDraws, SamplerConfig, compute_diagnostics, run_chains
from .model import (
    MODEL_MENU,
    DataError,
    ModelSpec,
    ParameterState,
    PortfolioData,
    PriorConfig,
    log_likelihood,
    log_posterior,
    log_prior,
)
from .risk import (
    PredictiveConfig,
    RiskReport,
    draw_predictive,
    expected_shortfall,
    premium,
    tail_value_at_risk,
    value_at_risk,
)
from .selection import compare_models, crps, dic

__version__ = "0.1.0"

__all__ = [
    "HAS_NUMBA",
    "MODEL_MENU",
    "ChainDraws",
    "DataError",
    "DomainError",
    "ModelSpec",
    "ParameterState",
    "PortfolioData",
    "PredictiveConfig",
    "PriorConfig",
    "RiskReport",
    "SamplerConfig",
    "backend",
    "compare_models",
    "compute_diagnostics",
    "crps",
    "dic",
    "draw_predictive",
    "expected_shortfall",
    "log_likelihood",
    "log_posterior",
    "log_prior",
    "moment_match",
    "premium",
    "run_chains",
    "tail_value_at_risk",
    "value_at_risk",
]
