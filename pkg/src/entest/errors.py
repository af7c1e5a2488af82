"""Exception hierarchy.

Config errors (bad parameters, invalid specs) and data errors (malformed or
degenerate inputs) map to distinct CLI exit codes.
"""


class EntestError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(EntestError, ValueError):
    exit_code = 2


class DomainError(ConfigError):
    """An argument lies outside the domain of a function."""


class DataError(EntestError, ValueError):
    exit_code = 3


class DegenerateDirectionError(DataError):
    """w' Sigma w is numerically zero for the requested direction."""


class DegenerateSubsetError(DataError):
    """The correlation submatrix for an index subset is ill-conditioned."""


class NumericalError(EntestError, ArithmeticError):
    """An algorithm failed to converge; ``diagnostics`` says where."""

    exit_code = 3

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
