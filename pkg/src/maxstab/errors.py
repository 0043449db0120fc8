"""Exception hierarchy shared by all maxstab modules."""


class MaxStabError(Exception):
    """Base class for all package errors."""


class DomainError(MaxStabError, ValueError):
    """An argument lies outside the mathematical domain of a function."""


class ParameterError(MaxStabError, ValueError):
    """Model parameters are invalid or outside their bounds."""


class InsufficientDataError(MaxStabError, ValueError):
    """Too few observations for the requested estimate."""


class NonIdentifiableError(MaxStabError, ValueError):
    """The data cannot identify the model parameters (e.g. constant series)."""


class ConvergenceError(MaxStabError, RuntimeError):
    """An optimizer failed to converge.

    ``trace`` holds whatever the optimizer reported before giving up.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class MatrixError(MaxStabError, ValueError):
    """A matrix is singular, not positive definite, or cannot be factorized."""


class DegenerateModelError(MaxStabError, ValueError):
    """The dependence parameter is at a degenerate value (e.g. full dependence)."""


class EvaluationError(MaxStabError, RuntimeError):
    """An objective could not be evaluated to a finite value."""


class BoundaryError(MaxStabError, ValueError):
    """A parameter sits too close to a bound for two-sided finite differences."""


class DataError(MaxStabError, ValueError):
    """Input data are inconsistent with what an operation requires."""


class ParseError(DataError):
    """A data file does not follow the documented schema."""

    def __init__(self, message, line=None, path=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{':'.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.path = path


class ConfigError(MaxStabError, ValueError):
    """A run configuration is malformed or inconsistent."""
