"""Exception hierarchy shared by all modules.

The CLI maps each class to its own exit code.
"""


class NetlumpError(Exception):
    """Base class for all package errors."""


class ModelParseError(NetlumpError, ValueError):
    """Syntax or semantic error in a model description."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "")
            message = f"{where}: {message}"
        super().__init__(message)


class ValidationError(NetlumpError, ValueError):
    """Input that parses but violates a domain invariant."""


class NumericalError(NetlumpError, RuntimeError):
    """Integration failure, non-finite right-hand side, step-size collapse."""


class ResourceLimitError(NetlumpError, RuntimeError):
    """A configured size guard (e.g. AME unknown cap) would be exceeded."""
