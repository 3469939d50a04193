"""Exception types shared across the package.

All of them are ``ValueError`` subclasses so callers that only care about
"bad input" can keep catching ``ValueError``.
"""

from typing import Optional


class InvalidArgumentError(ValueError):
    """An argument is outside the operation's documented preconditions."""


class DomainError(ValueError):
    """A formula is evaluated outside its mathematical domain."""


class ScheduleViolationError(ValueError):
    """A DDIM standard deviation exceeds the admissible bound eta_s <= sigma_s."""


class UnsupportedMethodError(ValueError):
    """A guidance method is paired with a prior it cannot handle."""


class UndefinedMetricError(ValueError):
    """A metric is requested on data where it is not defined."""


class ConfigError(ValueError):
    """An experiment config is malformed.

    Attributes:
        line: 1-based line number of the offending entry, if known.
    """

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        super().__init__(message)
        self.message = message
        self.line = line

    def __str__(self) -> str:
        message = super().__str__()
        return f"line {self.line}: {message}" if self.line is not None else message
