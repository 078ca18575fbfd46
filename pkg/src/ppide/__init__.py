"""Path-dependent PIDEs: paths, simulation, nonlinear expectations and frozen-path solvers."""

from .errors import (
    ApproximationError,
    AssumptionError,
    EvaluationError,
    InputError,
    PpideError,
    SimulationError,
    SolverError,
)
from .paths import CadlagPath, PathHistory, TimePoint, bump, concat, d_inf, load_path, save_path, stop
from .simulate import AtomicLaw, Characteristics, Ensemble, FiniteLevy, MappedJumps, UniformLaw, simulate

__version__ = "0.1.0"

__all__ = [
    "ApproximationError",
    "AssumptionError",
    "AtomicLaw",
    "CadlagPath",
    "Characteristics",
    "Ensemble",
    "EvaluationError",
    "FiniteLevy",
    "InputError",
    "MappedJumps",
    "PathHistory",
    "PpideError",
    "SimulationError",
    "SolverError",
    "TimePoint",
    "UniformLaw",
    "bump",
    "concat",
    "d_inf",
    "load_path",
    "save_path",
    "simulate",
    "stop",
]
