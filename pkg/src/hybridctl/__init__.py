"""Optimal control of hybrid systems with impulsive state jumps."""

from .controls import ConstantControl, ControlSignal, FeedbackControl, TableControl
from .grid import Grid
from .hjb import Policy, ValueFunction, solve, solve_aftereffect, solve_basic, solve_parametrized
from .model import (
    ControlSet,
    CostSpec,
    HybridSystem,
    ImpulseSchedule,
    InterpolationOperator,
    Problem,
    SampledDataSystem,
    ValidationError,
    lq_to_general,
    reduce_sampled_data,
    validate_system,
)
from .riccati import LQSystem, RiccatiSolution, solve_impulsive_riccati
from .sim import CostBreakdown, Trajectory, evaluate_cost, integrate

__version__ = "0.1.0"

__all__ = [
    "ConstantControl",
    "ControlSet",
    "ControlSignal",
    "CostBreakdown",
    "CostSpec",
    "FeedbackControl",
    "Grid",
    "HybridSystem",
    "ImpulseSchedule",
    "InterpolationOperator",
    "LQSystem",
    "Policy",
    "Problem",
    "RiccatiSolution",
    "SampledDataSystem",
    "TableControl",
    "Trajectory",
    "ValidationError",
    "ValueFunction",
    "evaluate_cost",
    "integrate",
    "lq_to_general",
    "reduce_sampled_data",
    "solve",
    "solve_aftereffect",
    "solve_basic",
    "solve_impulsive_riccati",
    "solve_parametrized",
    "validate_system",
]
