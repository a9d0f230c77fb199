"""Dynamic snakes - active contours as damped mechanical systems."""

__version__ = "0.1.0"

from dynsnake.contour import Contour, StiffnessSet, build_matrices
from dynsnake.errors import SnakeError
from dynsnake.models import ConvexityReport, EquilibriumClassification, Region, SnakeParams, StopSpec, Topology
from dynsnake.potential import ScalarField, build_synthetic, load_pgm

__all__ = [
    "Contour",
    "ConvexityReport",
    "EquilibriumClassification",
    "Region",
    "ScalarField",
    "SnakeError",
    "SnakeParams",
    "StiffnessSet",
    "StopSpec",
    "Topology",
    "build_matrices",
    "build_synthetic",
    "load_pgm",
]
