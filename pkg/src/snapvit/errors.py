"""Exception hierarchy shared by every snapvit module."""


class SnapVitError(Exception):
    """Base class for all library errors."""


class DimensionError(SnapVitError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(SnapVitError, ValueError):
    """A documented precondition was violated by the caller."""


class SingularityError(SnapVitError, ArithmeticError):
    """A matrix expected to be positive definite is not."""


class ConstraintError(SnapVitError, ValueError):
    """A pruning mask or request violates the per-layer caps."""


class InfeasibleSparsityError(ConstraintError):
    """The requested sparsity cannot be reached under the per-layer caps."""

    def __init__(self, message, binding=None):
        super().__init__(message)
        self.binding = binding


class ConfigError(SnapVitError, ValueError):
    """Invalid configuration value."""


class DataError(SnapVitError, ValueError):
    """Empty or malformed dataset."""


class CensusError(SnapVitError, ValueError):
    """Structure census is inconsistent with the supplied tensors."""


class DegenerateInputError(SnapVitError, ValueError):
    """Input has zero variance where a normalisation needs it."""


class InitError(SnapVitError, ValueError):
    """Search distribution cannot be initialised from the given matrix."""


class FormatError(SnapVitError, ValueError):
    """A binary artifact is truncated or carries the wrong magic."""
