"""Approximate controllability workbench for damped second-order evolution inclusions."""

from .errors import ApproxCtlError, DiagnosticError, ScenarioError
from .families import DampingSpec, EvolutionKernel, TimeGrid, build_kernel, verify_axioms
from .inclusion import (
    ControlProblem,
    ImpulseSpec,
    MildSolution,
    NonlocalSpec,
    SelectionStrategy,
    SetValuedMap,
    StateMap,
    TrajectoryMap,
    impulsive_solve,
    nonlocal_solve,
    picard_solve,
    sweep_regularization,
)
from .scenario import Scenario, load_scenario, parse_scenario
from .spectral import ModeSet
from .synthesis import Gramian, assemble_gramian, h0_diagnostic, linear_terminal_error, resolvent_apply

__version__ = "0.1.0"

__all__ = [
    "ApproxCtlError",
    "ControlProblem",
    "DampingSpec",
    "DiagnosticError",
    "EvolutionKernel",
    "Gramian",
    "ImpulseSpec",
    "MildSolution",
    "ModeSet",
    "NonlocalSpec",
    "Scenario",
    "ScenarioError",
    "SelectionStrategy",
    "SetValuedMap",
    "StateMap",
    "TimeGrid",
    "TrajectoryMap",
    "assemble_gramian",
    "build_kernel",
    "h0_diagnostic",
    "impulsive_solve",
    "linear_terminal_error",
    "load_scenario",
    "nonlocal_solve",
    "parse_scenario",
    "picard_solve",
    "resolvent_apply",
    "sweep_regularization",
    "verify_axioms",
]
