"""Compressible barotropic Navier-Stokes on moving domains, desk scale.

Characteristics-based transport, Lagrangian-transformed momentum solves,
boundary-data extension, Picard iteration, a penalized fixed-box solver,
and energy / relative-energy diagnostics.
"""

from . import errors
from .fields import Field, Grid, differentiate, interpolate, sobolev_norm

__version__ = "0.1.0"

__all__ = [
    "errors",
    "Grid",
    "Field",
    "differentiate",
    "interpolate",
    "sobolev_norm",
    "__version__",
]
