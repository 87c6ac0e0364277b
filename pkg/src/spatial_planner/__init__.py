"""Spatial path-velocity trajectory planning with augmented-Lagrangian ILQR."""
from .grid import SpatialGrid

__version__ = "0.1.0"

__all__ = ["SpatialGrid", "__version__"]
