"""Exception hierarchy shared by the library and the CLI.

Each class carries the CLI exit code it maps to, so ``cli`` can translate any
library failure without a lookup table.
"""


class SaeError(Exception):
    exit_code = 1


class ConfigError(SaeError):
    exit_code = 2


class SchemaError(SaeError):
    """Malformed input data (missing values, bad arity, unknown labels)."""

    exit_code = 3


class NoPositiveResponsesError(SaeError):
    """Raised by ``restrict_positive`` when every response is zero."""

    exit_code = 3


class InsufficientDataError(SaeError):
    exit_code = 3


class NumericalError(SaeError):
    exit_code = 4


class SingularDesignError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message, fit_log=None):
        super().__init__(message)
        self.fit_log = fit_log


class SeparationError(NumericalError):
    """Logistic fit cannot be identified: one class only, or coefficients diverge.

    Callers fitting the zero-inflated estimator fall back to a fixed-effects
    logistic model when they see this.
    """
