"""Mixed-dimensional poromechanics with frictionless fracture contact in 2D."""

import os

from .meshkit import MixedDimMesh, build_mesh, load_mesh, refine_uniform

__all__ = ["MixedDimMesh", "build_mesh", "load_mesh", "refine_uniform", "data_path"]
__version__ = "0.1.0"


def data_path(name: str) -> str:
    """Path of a file shipped in the package data directory."""
    return os.path.join(os.path.dirname(__file__), "data", name)
