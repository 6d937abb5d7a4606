"""Exception types shared across the package.

Each maps to one CLI exit code (see ``sspl.cli``).
"""


class SSPLError(Exception):
    exit_code = 1


class UsageError(SSPLError, ValueError):
    exit_code = 1


class DimensionError(SSPLError, ValueError):
    exit_code = 1


class ConfigurationError(SSPLError, ValueError):
    exit_code = 1


class FormatError(SSPLError):
    exit_code = 2

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(SSPLError, ArithmeticError):
    exit_code = 3
