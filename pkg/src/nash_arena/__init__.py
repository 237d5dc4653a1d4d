"""Exact and neural solvers for skew-symmetric preference games."""
from .equilibrium import (
    ConstantsReport,
    NashSet,
    duality_gap,
    instance_constants,
    interior_ne,
    kl_project,
)
from .estimators import InteriorNash, NashSolver, NeuralNashSolver
from .exceptions import (
    AssumptionViolatedError,
    ConvergenceError,
    DomainError,
    InnerSolveError,
    InvalidDimensionError,
)
from .game import (
    GameInstance,
    preference_probability,
    rps_matrix,
    sample_preference_matrix,
    validate_preference_matrix,
)
from .solvers import SolverConfig, SolverState, Trace, TraceRecord, run_solver

__version__ = "0.1.0"

__all__ = [
    "AssumptionViolatedError", "ConstantsReport", "ConvergenceError", "DomainError",
    "GameInstance", "InnerSolveError", "InteriorNash", "InvalidDimensionError", "NashSet",
    "NashSolver", "NeuralNashSolver", "SolverConfig", "SolverState", "Trace", "TraceRecord",
    "duality_gap", "instance_constants", "interior_ne", "kl_project", "preference_probability",
    "rps_matrix", "run_solver", "sample_preference_matrix", "validate_preference_matrix",
]
