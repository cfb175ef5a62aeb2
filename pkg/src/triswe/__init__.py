"""Adaptive central-upwind shallow water solver on triangular meshes."""

from .amr import MeshHierarchy, adapt, project_state
from .bathymetry import Bathymetry, build_bathymetry, refine_bathymetry
from .mesh import (
    MeshError,
    Triangulation,
    build_triangulation,
    read_mesh,
    uniform_mesh,
    write_mesh,
)
from .scenarios import ConfigError, RunConfig, make_config, scenario
from .solver import RunReport, run
from .timestepping import SolverError, SolverParams, evolve_macro_step

__all__ = [
    "Triangulation",
    "MeshError",
    "build_triangulation",
    "uniform_mesh",
    "read_mesh",
    "write_mesh",
    "Bathymetry",
    "build_bathymetry",
    "refine_bathymetry",
    "MeshHierarchy",
    "adapt",
    "project_state",
    "RunConfig",
    "ConfigError",
    "make_config",
    "scenario",
    "RunReport",
    "run",
    "SolverError",
    "SolverParams",
    "evolve_macro_step",
]

__version__ = "0.1.0"
