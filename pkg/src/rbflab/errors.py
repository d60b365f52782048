"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration problems exit 2,
a diverging time integration exits 3, and numerical failures exit 4.
"""


class RbfLabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(RbfLabError):
    """Invalid or unsatisfiable user-supplied parameters."""


class NumericalError(RbfLabError):
    """A numerical procedure failed (factorization, eigensolve, ...)."""


class UnisolvencyError(NumericalError):
    """A point configuration cannot support the requested monomial degree."""


class CoverageError(NumericalError):
    """A point is not covered by any patch of a partition-of-unity cover."""


class GeometryError(NumericalError):
    """Voronoi/Delaunay construction failed on a degenerate configuration."""


class SolverError(NumericalError):
    """An iterative solver did not reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DivergenceError(RbfLabError):
    """The time integration blew up (NaN/inf in the solution)."""

    def __init__(self, message, time=None, trace=None):
        super().__init__(message)
        self.time = time
        self.trace = trace
