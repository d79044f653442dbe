"""Exception types shared across the package."""


class DplabError(Exception):
    """Base class for all package-specific errors."""


class ExpressionError(DplabError):
    """Malformed or unevaluable field expression."""


class ConfigError(DplabError):
    """Malformed run configuration."""


class GridMismatch(DplabError):
    """Fields that must share a grid have incompatible shapes."""


class DomainError(DplabError):
    """Argument outside the mathematical domain of an operation."""


class WidthTooLarge(DplabError):
    """Mollifier support does not fit inside the domain."""


class DegenerateEvaluation(DplabError):
    """Flux derivative requested at a point where it does not exist."""


class InadmissibleR(DplabError):
    """Gradient integrability order outside the admissible interval."""


class NewtonDiverged(DplabError):
    """Damped Newton failed to reduce the residual below tolerance."""

    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


class LinearSolveFailed(DplabError):
    """CG breakdown; the system matrix lost positive definiteness."""


class ContinuationStalled(DplabError):
    """Continuation metrics failed to decrease for several levels."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class IncompleteCheckpoints(DplabError):
    """Checkpoint directory is missing time slices."""
