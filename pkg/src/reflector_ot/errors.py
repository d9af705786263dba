"""Exception types shared across the package."""


class ReflectorOTError(Exception):
    """Base class for all package errors."""


class DomainError(ReflectorOTError):
    """Input outside the mathematical domain of an operation (e.g. cost at x = y)."""


class DegenerateInput(ReflectorOTError):
    """Geometrically degenerate input (e.g. projecting the cap axis to the rim)."""


class InvalidParameter(ReflectorOTError):
    """Parameter outside its admissible range."""


class NotBoundary(ReflectorOTError):
    """A mesh node was expected on the boundary but is interior."""


class AssemblyError(ReflectorOTError):
    """Degenerate element encountered during finite element assembly."""


class NoConvergence(ReflectorOTError):
    """Iterative linear solver failed to reach the requested tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ZeroMass(ReflectorOTError):
    """An intensity integrates to (numerically) zero."""


class EmptySupport(ReflectorOTError):
    """A raster intensity has no cell above the support threshold."""


class RejectionStall(ReflectorOTError):
    """Rejection sampling acceptance rate fell below the safety floor."""


class PointLocationError(ReflectorOTError):
    """A query point could not be located inside the mesh."""


class NonpositiveTheta(ReflectorOTError):
    """The per-iteration mass normalisation came out nonpositive."""


class SolverError(ReflectorOTError):
    """Failure inside the descent loop, annotated with the iteration index."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class GridMismatch(ReflectorOTError):
    """Two images that must share a grid do not."""


class ConfigError(ReflectorOTError):
    """Malformed or inconsistent run configuration."""
