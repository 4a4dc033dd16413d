"""Willmore flow laboratory.

Discrete Willmore flow of closed triangulated surfaces in Euclidean space,
space forms and conformally flat ambients, with curvature-concentration and
Sobolev-inequality diagnostics.
"""
from .ambient import AmbientSpace, euclidean, hyperbolic, spherical
from .errors import WillmoreLabError
from .flow import FlowState, StepControl, Termination, initial_state, run, step
from .mesh import Immersion
from .shape import ShapeState, shape_state, willmore_energy

__all__ = [
    "AmbientSpace",
    "FlowState",
    "Immersion",
    "ShapeState",
    "StepControl",
    "Termination",
    "WillmoreLabError",
    "euclidean",
    "hyperbolic",
    "initial_state",
    "run",
    "shape_state",
    "spherical",
    "step",
    "willmore_energy",
]
