"""Exception types raised across the package."""


class BvaeError(Exception):
    """Base class for all package errors."""


class PreconditionError(BvaeError, ValueError):
    """An input violates a documented precondition (shape, symmetry, ...)."""


class DomainError(BvaeError, ValueError):
    """A matrix is outside the domain of a factorization (e.g. not SPD)."""

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class NumericalError(BvaeError, ArithmeticError):
    """An iterative routine failed to converge."""

    def __init__(self, message: str, iterations: int | None = None):
        super().__init__(message)
        self.iterations = iterations


class ConfigurationError(BvaeError, ValueError):
    """Invalid generation, training or experiment configuration."""


class DataError(BvaeError, ValueError):
    """Observed data is malformed, e.g. a non-binary entry."""

    def __init__(self, message: str, index: tuple[int, ...] | None = None):
        super().__init__(message)
        self.index = index


class ArchitectureError(BvaeError, ValueError):
    """A network architecture cannot support the requested operation."""


class StaleCacheError(BvaeError, RuntimeError):
    """A forward cache no longer matches the parameters it was built from."""


class TrainingError(BvaeError, RuntimeError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
