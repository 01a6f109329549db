"""Exception types shared across the package."""


class WillmoreLabError(Exception):
    """Base class for all package errors."""


class DomainError(WillmoreLabError, ValueError):
    """A point or geodesic left the ball on which a chart is valid."""


class SolverError(WillmoreLabError, RuntimeError):
    """An iterative solver failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message if residual is None else f"{message} (residual {residual:.3e})")
        self.residual = residual


class DegeneracyError(WillmoreLabError, ArithmeticError):
    """A surface became degenerate (non star-shaped, singular induced metric, ...)."""


class ConfigError(WillmoreLabError, ValueError):
    """Invalid configuration or input file."""
