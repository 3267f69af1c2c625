"""Representing nonnegative f(X) as E[g(Y) | X] with nonnegative g."""

from .intervals import IntervalSet
from .measures import (
    ConditionalKernel,
    DiscreteJoint,
    d_epsilon_set,
    dirac_set,
    kernel_x_given,
    kernel_y_given,
    marginals,
)
from .representation import (
    FeasibilityResult,
    check_condition_d,
    check_necessary,
    construct_g_dirac,
    decide_rplus,
    find_tau,
    solve_nonneg,
)

__all__ = [
    "ConditionalKernel",
    "DiscreteJoint",
    "FeasibilityResult",
    "IntervalSet",
    "check_condition_d",
    "check_necessary",
    "construct_g_dirac",
    "d_epsilon_set",
    "decide_rplus",
    "dirac_set",
    "find_tau",
    "kernel_x_given",
    "kernel_y_given",
    "marginals",
    "solve_nonneg",
]

__version__ = "0.1.0"
