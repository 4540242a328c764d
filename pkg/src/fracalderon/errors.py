"""Exception types raised across the package."""


class FracalderonError(Exception):
    """Base class for all package errors."""


class HermitianViolation(FracalderonError):
    """Spectral coefficients are not the transform of a real field."""


class GeometryError(FracalderonError):
    """Region description is inconsistent with the grid or the problem."""


class DomainError(FracalderonError, ValueError):
    """Argument outside the domain of a special function or kernel."""


class QuadratureError(FracalderonError):
    """Kernel quadrature does not resolve the grid."""


class ExtrapolationError(FracalderonError):
    """Extrapolation to zero height did not reach the required accuracy."""


class NonConvergence(FracalderonError):
    """A Krylov iteration exhausted its iteration budget."""

    def __init__(self, message, iterations=None, relres=None):
        super().__init__(message)
        self.iterations = iterations
        self.relres = relres


class EmptyMask(FracalderonError):
    """No interior node is resolvable for pointwise recovery."""


class ConfigError(FracalderonError):
    """Experiment configuration could not be parsed or validated."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
