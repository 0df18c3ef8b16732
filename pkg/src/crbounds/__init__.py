"""Cramer-Rao lower bounds for linear and two-layer regression, with numerical checks."""

from .core_model import (Activation, ConfigError, GaussConstants, ModelConfig, NumericalFailure,
                         constants, gauss_expect, snr_db)
from .bounds import (BoundReport, bound_b1, bound_b2, bound_linear_any, bound_two_layer,
                     bound_unbiased, rank_for_model, ridge_error, ridge_lambda_opt)
from .mp_law import MPLaw, mp_density, mp_integrate, sample_wishart_spectrum
from .stieltjes import StieltjesPair, solve_complex, solve_fixed_point
from .kernels import BACKEND

__all__ = [
    "Activation", "ConfigError", "GaussConstants", "ModelConfig", "NumericalFailure",
    "constants", "gauss_expect", "snr_db",
    "BoundReport", "bound_b1", "bound_b2", "bound_linear_any", "bound_two_layer",
    "bound_unbiased", "rank_for_model", "ridge_error", "ridge_lambda_opt",
    "MPLaw", "mp_density", "mp_integrate", "sample_wishart_spectrum",
    "StieltjesPair", "solve_complex", "solve_fixed_point", "BACKEND",
]
