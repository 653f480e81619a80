"""Exception types shared across the package."""


class NoisyIlrmaError(Exception):
    """Base class for errors raised by this package."""


class UsageError(NoisyIlrmaError, ValueError):
    """Invalid arguments: shapes, ranges or incompatible configurations."""


class DataError(NoisyIlrmaError, ValueError):
    """Input data is not usable (NaN, degenerate energy)."""


class SingularMatrixError(NoisyIlrmaError, ArithmeticError):
    """A matrix that has to be inverted is numerically singular."""


class SingularPencilError(SingularMatrixError):
    """The right-hand matrix of a generalized eigenproblem is not positive definite."""

    def __init__(self, message, frequency=None):
        if frequency is not None:
            message = f"{message} (frequency bin {frequency})"
        super().__init__(message)
        self.frequency = frequency


class NumericalWarning(RuntimeWarning):
    """Emitted when a per-bin fallback replaces a failed numerical step."""
