"""Robust MDP tools for elliptic (sum-of-norms) transition uncertainty."""

__version__ = "0.1.0"

from .errors import (ConvergenceError, DegenerateEllipseError, EllipticRLError, InfeasibleError,
                     InputError, KernelValidityError, TrainingError)
from .oracle import oracle_solve
from .robust_dp import (Policy, TabularMDP, UncertaintyModel, policy_evaluation_linear,
                        robust_bellman_apply, robust_policy_evaluation_vi, worst_case_kernel)
from .robust_td import (ActorCriticConfig, TDConfig, robust_actor_critic,
                        robust_policy_evaluation_td, robust_td_step)
from .solver import WorstCaseProblem, WorstCaseSolution, argmin_shift, solve
from .uncertainty import EllipticSetSpec, NormExponent, QuadraticForm, contains, to_quadratic_form

__all__ = [
    "ActorCriticConfig", "ConvergenceError", "DegenerateEllipseError", "EllipticRLError",
    "EllipticSetSpec", "InfeasibleError", "InputError", "KernelValidityError", "NormExponent",
    "Policy", "QuadraticForm", "TDConfig", "TabularMDP", "TrainingError", "UncertaintyModel",
    "WorstCaseProblem", "WorstCaseSolution", "argmin_shift", "contains", "oracle_solve",
    "policy_evaluation_linear", "robust_actor_critic", "robust_bellman_apply",
    "robust_policy_evaluation_td", "robust_policy_evaluation_vi", "robust_td_step", "solve",
    "to_quadratic_form", "worst_case_kernel",
]
