"""Gradient estimators for stochastic binary networks."""

from .analysis import ascent_condition_check, quadratic_lipschitz, unit_moments
from .core import GradEstimate, backprop, flatten
from .enumeration import (EnumerationBudgetError, det_state_probability, enumeration_bits,
                          exact_gradient_enum, expected_estimator_enum, expected_loss_enum)
from .gumbel import (gs_bias_quadrature, gs_expected_gradient, gs_gradient, gs_second_moment,
                     gs_threshold_probability, gs_threshold_probability_mc,
                     gs_variance_quadrature, logistic_density, st_gs_expected_gradient,
                     st_gs_gradient)
from .kinds import EstimatorKind, estimate
from .straight_through import (det_st_backward, gs_backward, identity_st_backward,
                               local_expectations, local_expectations_avg,
                               local_expectations_from_tape, rescaled_st_backward,
                               st_backward, st_gs_backward)

__all__ = [
    "EnumerationBudgetError", "EstimatorKind", "GradEstimate", "ascent_condition_check",
    "backprop", "det_st_backward", "det_state_probability", "enumeration_bits", "estimate",
    "exact_gradient_enum", "expected_estimator_enum", "expected_loss_enum", "flatten",
    "gs_backward", "gs_bias_quadrature", "gs_expected_gradient", "gs_gradient",
    "gs_second_moment", "gs_threshold_probability", "gs_threshold_probability_mc",
    "gs_variance_quadrature", "identity_st_backward", "local_expectations",
    "local_expectations_avg", "local_expectations_from_tape", "logistic_density",
    "quadratic_lipschitz", "rescaled_st_backward", "st_backward", "st_gs_backward",
    "st_gs_expected_gradient", "st_gs_gradient", "unit_moments",
]
