"""Numerical laboratory for mean field games with moderate interaction.

The backward value equation and the forward density equation are solved in
mild (heat-semigroup) form by Picard iteration; the resulting feedback drives
a simulated N-player system whose empirical density and Nash gap are compared
with the limit.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .grid import Field, FieldFlow, Grid, VectorField
from .model import ModelSpec, builtin_model, validate_hypotheses
from .semigroup import HeatOperator
from .solver import MfgSolution, SolverError, solve_hopf_cole, solve_mfg, verify_mild_residual
from .forward import solve_forward
from .particles import SimConfig, FeedbackProfile, simulate, empirical_density

__all__ = [
    "Grid",
    "Field",
    "FieldFlow",
    "VectorField",
    "ModelSpec",
    "builtin_model",
    "validate_hypotheses",
    "HeatOperator",
    "MfgSolution",
    "SolverError",
    "solve_mfg",
    "solve_hopf_cole",
    "verify_mild_residual",
    "solve_forward",
    "SimConfig",
    "FeedbackProfile",
    "simulate",
    "empirical_density",
]
