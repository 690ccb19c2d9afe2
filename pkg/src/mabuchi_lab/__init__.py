"""eps-geodesics between S^1-invariant Kahler potentials in the one-dimensional
reduction: solver, energy functionals and convergence diagnostics."""

from .calculus import PathField, PathGrid
from .geodesic import SolverConfig, SolverError, continuation, geometric_ladder, newton_solve
from .geometry import ConeError, FiberModel, build_sphere_model, build_torus_model

__all__ = [
    "ConeError", "FiberModel", "PathField", "PathGrid", "SolverConfig", "SolverError",
    "build_sphere_model", "build_torus_model", "continuation", "geometric_ladder", "newton_solve",
]
__version__ = "0.1.0"
