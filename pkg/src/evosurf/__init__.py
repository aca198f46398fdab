"""Space-time trace finite elements for advection-diffusion on evolving surfaces."""
from .estimator import SpaceTimeTraceFEM
from .exceptions import (
    ConfigurationError,
    DomainError,
    EvosurfError,
    GeometryError,
    InternalError,
    OutOfDomainError,
    SolverFailure,
)
from .mesh import BoxDomain, TetMesh, TimeGrid, build_box_mesh, locate_point
from .problems import PROBLEMS, ProblemDefinition, get_problem

__all__ = [
    "SpaceTimeTraceFEM",
    "ConfigurationError", "DomainError", "EvosurfError", "GeometryError",
    "InternalError", "OutOfDomainError", "SolverFailure",
    "BoxDomain", "TetMesh", "TimeGrid", "build_box_mesh", "locate_point",
    "PROBLEMS", "ProblemDefinition", "get_problem",
]
__version__ = "0.1.0"
