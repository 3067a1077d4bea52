"""Numerical laboratory for sparse Schauder estimates of divergence-form equations."""

from .errors import (
    ConfigError,
    ConvergenceFailure,
    DomainMarginError,
    EllipticityViolation,
    InvalidArgument,
    InvalidWhitneyError,
    NoExteriorError,
    SchauderLabError,
    StoppingFailure,
    TooCoarseError,
    UnderResolvedError,
)
from .grid import Cube, GridSpec, dilate, dyadic_subcubes, subdivide_F, whitney_decompose
from .field import CoefficientField, GridField, ellipticity_check, holder_seminorm, mean_over

__version__ = "0.1.0"
