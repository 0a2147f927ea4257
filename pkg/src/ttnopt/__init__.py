"""Riemannian optimization of orthogonal tree tensor networks."""
from .tree import DimensionTree, build_balanced
from .ttn import TtnParam, TtnTangent, random_orthogonal, orthogonalize, phi_dense
from .retractions import RetractionKind
from .optimizers import HessianChoice, ProjectorChoice, rgd, rtr

__all__ = [
    "DimensionTree", "build_balanced", "TtnParam", "TtnTangent", "random_orthogonal",
    "orthogonalize", "phi_dense", "RetractionKind", "HessianChoice", "ProjectorChoice",
    "rgd", "rtr",
]
