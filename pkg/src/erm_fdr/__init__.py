"""Empirical risk minimisation with f-divergence regularisation."""

from .divergence import (
    DivergenceGenerator,
    check_generator,
    classify_zero_limit,
    conjugate,
    make_generator,
    parse_generator,
)
from .generr import (
    fdr_algorithm,
    gap,
    generalization_error_direct,
    generalization_error_fdr,
    generalization_error_report,
    generalization_error_theorem5,
    gibbs_generalization_error,
    marginal_model_law,
)
from .learning import DataGeneratingLaw, StochasticAlgorithm
from .model_space import (
    LossTable,
    ModelSupport,
    essential_extremes,
    expectation,
    is_separable,
    rashomon_mass,
)
from .oracle import brute_force_constrained, brute_force_regularized
from .solver import (
    FeasibilityReport,
    InfeasibleLambdaError,
    Posterior,
    dual_objective,
    dual_objective_derivative,
    duality_gap,
    feasibility,
    n_direction,
    normalization_constant,
    normalization_derivative,
    posterior,
    sweep,
    tilted_measure,
)

__version__ = "0.1.0"
