"""Data-driven distributionally robust MPC for linear systems with additive
unbounded disturbances: moment-based ambiguity calibration, cone-constrained
receding-horizon control, and closed-loop Monte-Carlo experiments."""

from .ambiguity import (AmbiguityCalibration, CalibrationInfeasibleError,
                        EmpiricalCovariance, SubGaussianSpec, calibrate,
                        estimate_covariance, gamma, min_samples, optimize_epsilon)
from .controller import (Controller, ControllerConfig, ControllerState,
                         InitializationInfeasibleError, RecursiveFeasibilityError,
                         StepDiagnostics, build_problem, cost_decrease_check)
from .costs import CostWeights, WorstCaseSecondMoment, mean_variance_cost, trace_cost
from .policy import (ErrorFeedbackPolicy, SADFPolicy, applied_input, ef_to_sadf,
                     sadf_to_ef, shift_candidate)
from .prediction import LTISystem, StackedModel, build_stacked, nominal_trajectory
from .terminal import (TerminalIngredients, check_invariance, max_alpha,
                       steady_state_cov, synthesize_gain)
from .tightening import HalfspaceSpec, lift_stage_halfspaces, sigma_n_factor

__version__ = "0.1.0"

__all__ = [
    "AmbiguityCalibration", "CalibrationInfeasibleError", "EmpiricalCovariance",
    "SubGaussianSpec", "calibrate", "estimate_covariance", "gamma", "min_samples",
    "optimize_epsilon",
    "Controller", "ControllerConfig", "ControllerState",
    "InitializationInfeasibleError", "RecursiveFeasibilityError", "StepDiagnostics",
    "build_problem", "cost_decrease_check",
    "CostWeights", "WorstCaseSecondMoment", "mean_variance_cost", "trace_cost",
    "ErrorFeedbackPolicy", "SADFPolicy", "applied_input", "ef_to_sadf",
    "sadf_to_ef", "shift_candidate",
    "LTISystem", "StackedModel", "build_stacked", "nominal_trajectory",
    "TerminalIngredients", "check_invariance", "max_alpha", "steady_state_cov",
    "synthesize_gain",
    "HalfspaceSpec", "lift_stage_halfspaces", "sigma_n_factor",
]
