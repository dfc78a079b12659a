"""Averaging-based control synthesis for two-time-scale systems.

The fast subsystem ``eps dy/dt = A y + B u`` is linear and controllable;
the slow one ``dz/dt = g(u, y, z)`` is nonlinear. Time averages of ``g``
along fast trajectories fill the convex hull ``V(z)`` of ``g``'s image, so
any solution of ``dz/dt in V(z)`` can be tracked by the coupled system
with an explicit error bound linear in ``eps S``.
"""

__version__ = "0.1.0"

from .errors import (
    AvgctlError,
    BoundViolation,
    DimensionError,
    DomainError,
    EvaluationError,
    NumericalFailure,
    RankError,
    ScheduleInfeasible,
    SchemaError,
    SteeringIllConditioned,
)
from .linops import expm, gramian, kalman_rank
from .model import FastSystem, Scenario, SlowDynamics, load_scenario, scenario_from_dict
from .steer import steering_gain
from .hull import caratheodory_reduce, hull_hausdorff, project, sample_atoms
from .average import build_schedule, realize_average
from .track import error_bound, make_partition, synthesize
from .relax import corollary_compare, optimize_terminal, solve_relaxed_ode

__all__ = [
    "__version__",
    "AvgctlError",
    "BoundViolation",
    "DimensionError",
    "DomainError",
    "EvaluationError",
    "NumericalFailure",
    "RankError",
    "ScheduleInfeasible",
    "SchemaError",
    "SteeringIllConditioned",
    "expm",
    "gramian",
    "kalman_rank",
    "FastSystem",
    "Scenario",
    "SlowDynamics",
    "load_scenario",
    "scenario_from_dict",
    "steering_gain",
    "caratheodory_reduce",
    "hull_hausdorff",
    "project",
    "sample_atoms",
    "build_schedule",
    "realize_average",
    "error_bound",
    "make_partition",
    "synthesize",
    "corollary_compare",
    "optimize_terminal",
    "solve_relaxed_ode",
]
