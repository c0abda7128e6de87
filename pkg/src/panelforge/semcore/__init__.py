"""Covariance-structure modeling: model builder, moments, ML fit, tests."""

from .model import CompiledModel, CovarianceModel, independence_model, saturated_model
from .moments import SampleMoments, classical_moments, huber_consistency, robust_moments
from .fitting import (
    Estimate,
    FitOptions,
    FitResult,
    discrepancy_gradient,
    fit,
    implied_moments,
    information_matrix,
    ml_discrepancy,
    numerical_gradient,
    start_values,
)
from .indices import (
    DiffTest,
    FitIndices,
    akaike_information,
    chi_square_diff_test,
    chi_square_p,
    fit_indices,
    lm_test,
    lm_test_all,
)

__all__ = [
    "CompiledModel", "CovarianceModel", "independence_model", "saturated_model",
    "SampleMoments", "classical_moments", "huber_consistency", "robust_moments",
    "Estimate", "FitOptions", "FitResult", "discrepancy_gradient", "fit",
    "implied_moments", "information_matrix", "ml_discrepancy",
    "numerical_gradient", "start_values",
    "DiffTest", "FitIndices", "akaike_information", "chi_square_diff_test", "chi_square_p",
    "fit_indices", "lm_test", "lm_test_all",
]
