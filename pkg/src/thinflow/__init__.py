"""Reduced models for gravity-driven thin-layer free-surface flows.

Shallow-water-type (inertial) and lubrication-type (viscous) solvers for
Newtonian, power-law, Bingham-limit and viscoelastic (UCM / FENE-P) fluids,
with 3D field reconstruction and an asymptotic residual audit.
"""

from .grid import Grid2D, Topography, Forcing, build_topography, forcing_from_angle
from .state import ShallowState, ConformationState, RheologyParams, Model, Closure
from .stepping import StepControl, SolverAbort, RunResult, run, step, stable_dt
from .reconstruct import Extrusion3D, extrude, write_extrusion
from .audit import ResidualReport, SlopeFit, residuals, epsilon_sweep
from .config import Scenario, ConfigError, parse_config

__all__ = [
    "Grid2D",
    "Topography",
    "Forcing",
    "build_topography",
    "forcing_from_angle",
    "ShallowState",
    "ConformationState",
    "RheologyParams",
    "Model",
    "Closure",
    "StepControl",
    "SolverAbort",
    "RunResult",
    "run",
    "step",
    "stable_dt",
    "Extrusion3D",
    "extrude",
    "write_extrusion",
    "ResidualReport",
    "SlopeFit",
    "residuals",
    "epsilon_sweep",
    "Scenario",
    "ConfigError",
    "parse_config",
]

__version__ = "0.1.0"
