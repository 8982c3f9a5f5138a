"""Exception types shared across the toolkit."""


class UnlearnkitError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(UnlearnkitError):
    """Unknown architecture, schedule, method, or malformed config file."""


class DomainError(UnlearnkitError, ValueError):
    """An argument violates the operation's domain (range, positivity, ...)."""


class DataError(UnlearnkitError, ValueError):
    """Dataset contents or shapes violate a contract."""


class NumericalError(UnlearnkitError, ArithmeticError):
    """A non-finite value surfaced during optimization or loss evaluation."""


class ContractViolationError(UnlearnkitError):
    """A data split was handed to an operation whose contract forbids it."""


class ProbingFailedError(UnlearnkitError):
    """Boundary probing flipped no predictions, so no edit instructions exist."""


class ComparisonError(UnlearnkitError):
    """Reports being aggregated do not come from comparable experiments."""
