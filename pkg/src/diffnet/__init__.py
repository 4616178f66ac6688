"""Differentiable macroscopic traffic simulation on cumulative count curves.

Kinematic-wave link dynamics, incremental junction flow allocation, and
instantaneous route choice composed into a single differentiable timestep
scan on a scalar AD tape, with virtual-vehicle trip tracing and a toll
optimization layer on top.
"""

from .adcore import Tape, TapeError, Var, value
from .engine import (
    EngineError,
    SimResult,
    Simulator,
    Trajectory,
    TripIncompleteError,
    build_objective,
    objective_att,
    objective_ttt,
    run,
)
from .optimize import (
    AdamConfig,
    GradientReport,
    OptTrace,
    SPSAConfig,
    adam_optimize,
    fd_check,
    grad,
    spsa_optimize,
)
from .scenario import (
    DemandProfile,
    LinkParams,
    ParameterSet,
    Scenario,
    ScenarioError,
    SimConfig,
    TollSchedule,
    ValidationError,
    register_parameters,
)

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "Var",
    "TapeError",
    "value",
    "Scenario",
    "SimConfig",
    "LinkParams",
    "DemandProfile",
    "TollSchedule",
    "ScenarioError",
    "ValidationError",
    "ParameterSet",
    "register_parameters",
    "Simulator",
    "SimResult",
    "Trajectory",
    "EngineError",
    "TripIncompleteError",
    "run",
    "objective_ttt",
    "objective_att",
    "build_objective",
    "AdamConfig",
    "SPSAConfig",
    "GradientReport",
    "OptTrace",
    "grad",
    "fd_check",
    "adam_optimize",
    "spsa_optimize",
    "__version__",
]
