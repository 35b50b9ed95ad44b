"""Exception types shared across the package.

The CLI maps these onto stable exit codes (see ``galileo.cli``).
"""


class GalileoError(Exception):
    """Base class for all package errors."""


class ContractError(GalileoError, ValueError):
    """An operation was called outside its preconditions."""


class ConfigError(GalileoError, ValueError):
    """Invalid or inconsistent configuration."""


class FormatError(GalileoError, ValueError):
    """A GLEO/GLCK/text file could not be parsed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(GalileoError):
    """Dataset directory missing, unreadable or inconsistent."""


class NumericalAbort(GalileoError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path
