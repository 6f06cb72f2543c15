from .diagnostics import (
    Diagnostics,
    InsufficientDrawsError,
    compute_diagnostics,
    effective_sample_size,
    geweke_z,
    split_rhat,
)
from .sampler import ChainDraws, DivergenceWarning, SamplerConfig, SamplerError, run_chains
from .target import (
    NonFiniteGradient,
    PosteriorTarget,
    grad_log_posterior_unconstrained,
    log_jacobian,
    transform_to_constrained,
    transform_to_unconstrained,
)

__all__ = [
    "ChainDraws",
    "Diagnostics",
    "DivergenceWarning",
    "InsufficientDrawsError",
    "NonFiniteGradient",
    "PosteriorTarget",
    "SamplerConfig",
    "SamplerError",
    "compute_diagnostics",
    "effective_sample_size",
    "geweke_z",
    "grad_log_posterior_unconstrained",
    "log_jacobian",
    "run_chains",
    "split_rhat",
    "transform_to_constrained",
    "transform_to_unconstrained",
]
