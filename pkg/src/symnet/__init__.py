"""Convolutional networks with symmetry-constrained kernels."""

from .kernels import (
    OrbitMap,
    SymmetricKernel,
    SymmetryClass,
    T2BMode,
    build_orbit_map,
    count_parameters,
    expand,
    fold_gradient,
    init_kernel,
)
from .network import Condition, Network, count_network_parameters

__version__ = "0.1.0"

__all__ = [
    "Condition",
    "Network",
    "OrbitMap",
    "SymmetricKernel",
    "SymmetryClass",
    "T2BMode",
    "build_orbit_map",
    "count_network_parameters",
    "count_parameters",
    "expand",
    "fold_gradient",
    "init_kernel",
]
