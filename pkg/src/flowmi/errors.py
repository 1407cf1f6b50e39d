"""Exception types shared across the package."""


class FlowmiError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(FlowmiError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(FlowmiError):
    """An input lies outside the mathematical domain of an operation."""


class ContractError(FlowmiError):
    """A documented precondition was violated by the caller."""


class NumericError(FlowmiError):
    """A computation produced or received non-finite values."""


class FormatError(FlowmiError):
    """A file does not match its expected binary or JSON layout."""


class ConfigError(FlowmiError):
    """A run configuration is malformed or inconsistent."""


class TaskParseError(FlowmiError):
    """A task string could not be parsed.

    ``position`` is the zero-based character offset of the offending token
    within the original string, or ``None`` when the problem is not tied to
    a single location.
    """

    def __init__(self, message: str, position=None):
        super().__init__(message)
        self.position = position
