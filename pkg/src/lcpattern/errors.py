"""Exception types. Each maps to one CLI exit code."""


class LcPatternError(Exception):
    """Base class for errors raised by this package."""

    exit_code = 2


class SchemaError(LcPatternError):
    """An input file lacks a required column or field."""


class ParseError(LcPatternError):
    """An input cell could not be parsed as a number."""


class ValidationError(LcPatternError, ValueError):
    """A user-supplied specification or configuration is inconsistent."""


class NumericalError(LcPatternError, ArithmeticError):
    """A numerical routine failed (underflow, non-PD covariance, EM divergence)."""

    exit_code = 3


class StageError(LcPatternError):
    """A pipeline stage failed; wraps the underlying error with the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 2)
