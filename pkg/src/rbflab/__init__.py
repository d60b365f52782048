"""Meshfree RBF discretizations of 2D linear advection.

Three methods (global Kansa, partition-of-unity, stencil-based FD) built on
cubic polyharmonic splines with monomial augmentation, an oversampled
least-squares projection in time, and a Voronoi-edge jump penalty that
stabilizes the stencil-based method.
"""

from rbflab.errors import (
    ConfigurationError,
    CoverageError,
    DivergenceError,
    GeometryError,
    NumericalError,
    SolverError,
    UnisolvencyError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "CoverageError",
    "DivergenceError",
    "GeometryError",
    "NumericalError",
    "SolverError",
    "UnisolvencyError",
    "__version__",
]
