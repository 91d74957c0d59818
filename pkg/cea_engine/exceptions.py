"""
Custom exceptions for the cost-effectiveness engine.

Two families: ``InputError`` for problems with data, configuration or
arguments (CLI exit code 2) and ``NumericalError`` for estimation or
sampling failures (CLI exit code 3).
"""


class CeaEngineError(Exception):
    """Base exception for all engine errors."""


class InputError(CeaEngineError):
    """Raised when inputs (files, schemas, configuration) are invalid."""


class DataParseError(InputError):
    """Raised when a CSV cell cannot be parsed."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class SchemaError(InputError):
    """Raised when a file does not match the declared schema."""


class ConsistencyError(InputError):
    """Raised when data break a design invariant (e.g. a cluster in both arms)."""


class ConfigurationError(InputError):
    """Raised when a configuration section is malformed or out of range."""


class DegenerateDesignError(InputError):
    """Raised when an imputation design matrix is rank deficient."""

    def __init__(self, message, columns=None):
        super().__init__(message)
        self.columns = list(columns or [])


class PoolingError(InputError):
    """Raised when estimates cannot be combined."""


class SimulationError(InputError):
    """Raised when a simulation configuration is invalid."""


class NumericalError(CeaEngineError):
    """Base exception for numerical failures."""


class QuadratureError(NumericalError):
    """Raised when a quadrature rule cannot be built."""


class LikelihoodEvaluationError(NumericalError):
    """Raised when a density is evaluated at invalid parameters."""


class ConvergenceError(NumericalError):
    """Raised when the optimizer fails from every starting point."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SingularInformationError(NumericalError):
    """Raised when the observed information matrix cannot be inverted."""


class ImputationError(NumericalError):
    """Raised when the Gibbs sampler leaves the positive-definite cone."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class SeparationError(NumericalError):
    """Raised when a covariate perfectly separates observed from missing rows."""

    def __init__(self, message, covariate=None):
        super().__init__(message)
        self.covariate = covariate
