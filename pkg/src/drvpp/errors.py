"""Exception hierarchy shared by all drvpp modules."""


class DrvppError(Exception):
    """Base class for all package errors."""


class ParameterError(DrvppError, ValueError):
    """A model parameter violates its admissible range."""


class NumericError(DrvppError, ArithmeticError):
    """A computation produced non-finite values."""


class ConstraintError(DrvppError, ValueError):
    """An input lies outside its operating bounds."""


class ValidationError(DrvppError, ValueError):
    """Configuration or data file failed validation (CLI exit code 2)."""


class DataError(ValidationError):
    """Malformed, gapped or misaligned time-series input."""


class SolverError(DrvppError, RuntimeError):
    """The QP solver did not return a solved status."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution
