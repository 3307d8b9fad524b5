"""Exception types shared across the package."""


class BltailError(Exception):
    """Base class for all package errors."""


class ValidationError(BltailError, ValueError):
    """Malformed tensor, field or configuration."""


class DegenerateDirectionError(BltailError, ValueError):
    """Direction too close to the layering hyperplane (|n . nu0| < delta)."""


class OutOfChartError(BltailError, ValueError):
    """Point lies outside the chart of a rotation field."""


class SolverError(BltailError, RuntimeError):
    """A linear solve failed or did not reach its residual target."""


class DependencyError(BltailError, KeyError):
    """A required upstream quantity (tail, corrector data) is missing."""


class ConsistencyError(BltailError, RuntimeError):
    """An internal identity that should hold by construction was violated."""
