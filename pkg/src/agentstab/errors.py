"""Exception types raised across the package."""


class AgentStabError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ContractViolation(AgentStabError, ValueError):
    """A caller broke an operation's precondition."""

    exit_code = 3


class CalibrationError(AgentStabError, ValueError):
    """Calibration data is missing or unusable."""

    exit_code = 4


class VerdictError(AgentStabError, ValueError):
    """A stability verdict was requested without observed data."""

    exit_code = 4


class ConfigError(AgentStabError, ValueError):
    """A configuration file is malformed or violates a constraint.

    ``field`` names the offending key (dotted path) when one is known.
    """

    exit_code = 2

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
