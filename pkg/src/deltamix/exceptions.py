"""Exception taxonomy shared across the package."""


class DeltamixError(Exception):
    """Base class for all package errors."""


class ShapeError(DeltamixError, ValueError):
    """Operands have incompatible or invalid dimensions."""


class ConfigError(DeltamixError, ValueError):
    """Invalid configuration (bad candidate bits, duplicate layer names, ...)."""


class UnsupportedBitWidthError(ConfigError):
    """Requested a bit width the uniform grid cannot represent (negative or 1)."""


class NumericalError(DeltamixError, RuntimeError):
    """Base class for numerical failures (factorization, conditioning)."""


class FactorizationError(NumericalError):
    """An iterative factorization failed to converge."""


class SingularMatrixError(NumericalError):
    """A symmetric solve failed because the matrix is (numerically) singular."""


class IllConditionedHessianError(NumericalError):
    """Hessian could not be factorized even after damping escalation."""


class InfeasibleBudgetError(DeltamixError, ValueError):
    """No bit assignment satisfies the storage budget."""

    def __init__(self, message: str, min_required: float):
        super().__init__(message)
        self.min_required = min_required


class CorruptContainerError(DeltamixError, ValueError):
    """Container bytes fail structural or checksum validation."""


class UnknownLayerError(DeltamixError, KeyError):
    """Requested layer name is not present in the container."""
