"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, numeric failures with 3, and training non-convergence with 4.
"""


class HolonetError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(HolonetError, ValueError):
    """Operands have incompatible or invalid shapes."""


class ArgumentError(HolonetError, ValueError):
    """An argument violates a documented precondition."""


class NumericError(HolonetError, ArithmeticError):
    """A computation produced non-finite values or overflowed."""


class ConvergenceError(HolonetError, RuntimeError):
    """An iterative method failed to converge.

    ``best`` carries the last iterate so callers can inspect how far the
    method got.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class CapacityError(HolonetError, RuntimeError):
    """An input exceeds a model's structural capacity (e.g. positional table)."""


class ConfigError(HolonetError, ValueError):
    """A run configuration failed to parse or validate."""


class CorruptionError(HolonetError, RuntimeError):
    """A persisted artifact failed its integrity check."""


class VersionError(HolonetError, RuntimeError):
    """A persisted artifact has an unsupported format version."""
