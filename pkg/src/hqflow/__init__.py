"""Inverse curvature flow of spacelike graphs in de Sitter space, with verification monitors."""
from .flow import FlowConfig, GraphState, Trajectory, run
from .grids import build_grid

__all__ = ["FlowConfig", "GraphState", "Trajectory", "build_grid", "run"]
__version__ = "0.1.0"
