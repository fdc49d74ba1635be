"""Lyapunov feedback control of closed quantum systems with an implicit
perturbation that lifts degenerate (non strongly regular or not fully
connected) Hamiltonians."""

from .config import RunConfig, build_problem, parse_config, parse_config_tree
from .controller import ControllerConfig, ControlRecord, evaluate_control, lyapunov_value
from .dynamics import SimulationProblem, TrajectoryRecord, conservation_report, simulate
from .errors import (BranchCrossingError, ConfigError, DegenerateSpectrumError, DimensionError,
                     GammaSolveError, InvalidDensityError, LiouError, NotHermitianError)
from .pdesign import design_P, enumerate_E, verify_min_over_permutations
from .perturbation import ThetaSpec, existence_bound, solve_gamma
from .runner import RunResult, run_config
from .spectral import SpectralFrame, build_frame, build_P, dP_dgamma
from .target import TargetFrame, diagonalize_target, transform_problem, transition_probability

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "build_problem", "parse_config", "parse_config_tree",
    "ControllerConfig", "ControlRecord", "evaluate_control", "lyapunov_value",
    "SimulationProblem", "TrajectoryRecord", "conservation_report", "simulate",
    "BranchCrossingError", "ConfigError", "DegenerateSpectrumError", "DimensionError",
    "GammaSolveError", "InvalidDensityError", "LiouError", "NotHermitianError",
    "design_P", "enumerate_E", "verify_min_over_permutations",
    "ThetaSpec", "existence_bound", "solve_gamma",
    "RunResult", "run_config",
    "SpectralFrame", "build_frame", "build_P", "dP_dgamma",
    "TargetFrame", "diagonalize_target", "transform_problem", "transition_probability",
]
