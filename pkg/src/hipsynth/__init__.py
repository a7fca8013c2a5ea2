"""Topology and shape synthesis of spherical linkages for wearable hip assistance."""
from .cases import case_study, torque_profile
from .equilibrium import SpringModel, run_trajectory, solve_equilibrium
from .extraction import MechanismGraph, extract_mechanism, mobility
from .ground_model import DesignVector, SolverParams, SphericalGrid, build_grid
from .response import MomentCase, evaluate_response
from .synthesis import RefineOptions, SynthesisOptions, run_pipeline, synthesize

__version__ = "0.1.0"

__all__ = [
    "DesignVector",
    "MechanismGraph",
    "MomentCase",
    "RefineOptions",
    "SolverParams",
    "SphericalGrid",
    "SpringModel",
    "SynthesisOptions",
    "build_grid",
    "case_study",
    "evaluate_response",
    "extract_mechanism",
    "mobility",
    "run_pipeline",
    "run_trajectory",
    "solve_equilibrium",
    "synthesize",
    "torque_profile",
]
