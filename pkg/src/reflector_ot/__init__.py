"""Far-field freeform reflector design by optimal transport on the sphere.

The package solves the Kantorovich dual of the reflector problem with a
Sobolev gradient descent discretised by isoparametric Lagrange elements on a
spherical-cap mesh, and validates computed reflectors by Monte-Carlo ray
tracing of the source intensity.
"""

from . import capmesh, fem, intensity, raytrace, solver, sphere
from .capmesh import CapMesh, build_cap_mesh
from .fem import FESpace, solve_zero_mean, recover_sigma
from .intensity import (
    CapCircle,
    CapIndicator,
    GaussianFeatures,
    LiftedPlane,
    PlaneRaster,
    Polyline,
    SmoothBump,
    UniformCap,
    stereographic_lift,
)
from .solver import ReflectorProblem, SolveReport, SolverConfig, run

__all__ = [
    "CapCircle",
    "CapIndicator",
    "CapMesh",
    "FESpace",
    "GaussianFeatures",
    "LiftedPlane",
    "PlaneRaster",
    "Polyline",
    "ReflectorProblem",
    "SmoothBump",
    "SolveReport",
    "SolverConfig",
    "UniformCap",
    "build_cap_mesh",
    "capmesh",
    "fem",
    "intensity",
    "raytrace",
    "recover_sigma",
    "run",
    "solve_zero_mean",
    "solver",
    "sphere",
    "stereographic_lift",
]

__version__ = "0.1.0"
