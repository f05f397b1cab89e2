"""Exception types shared across the package."""


class TanmtError(Exception):
    """Base class for package errors."""


class ConfigError(TanmtError, ValueError):
    """Invalid configuration or missing required data."""


class CapacityError(TanmtError):
    """A request exceeds what can be generated or enumerated."""


class ContractError(TanmtError, ValueError):
    """Arguments violate an operation's preconditions."""


class ParseError(TanmtError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericError(TanmtError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class OracleOnlyError(TanmtError, TypeError):
    """An exact-enumeration routine was given a non-enumerable model."""
