"""
ohmstat: effective conductance of random resistor networks on lattice boxes,
its martingale decomposition and the numerical checks around it.
"""

from .environment import ConductanceLaw, Environment, derive_seed, homogeneous, sample
from .exceptions import (
    ContractionError,
    DomainError,
    IdentityError,
    NumericalError,
    OhmstatError,
    PreconditionError,
    QuadratureError,
    RangeError,
    SolverError,
)
from .lattice import BoxDomain, EdgeKey, box
from .solver import LatticeField, effective_conductance, harmonic_coordinate

__version__ = "0.1.0"

__all__ = [
    "BoxDomain",
    "ConductanceLaw",
    "ContractionError",
    "DomainError",
    "EdgeKey",
    "Environment",
    "IdentityError",
    "LatticeField",
    "NumericalError",
    "OhmstatError",
    "PreconditionError",
    "QuadratureError",
    "RangeError",
    "SolverError",
    "box",
    "derive_seed",
    "effective_conductance",
    "harmonic_coordinate",
    "homogeneous",
    "sample",
]
