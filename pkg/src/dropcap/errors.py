"""Exception hierarchy shared across the package.

CLI exit-code mapping: UsageError -> 1, DataError and its subclasses -> 2,
NumericalError -> 3.
"""


class DropcapError(Exception):
    pass


class UsageError(DropcapError):
    """Bad arguments or bad parameter values (probabilities out of range, ...)."""


class ShapeError(UsageError):
    """Operand dimensions do not line up."""


class DataError(DropcapError):
    """Problems with input data: missing ids, empty corpora, bad vocab ids."""


class FormatError(DataError):
    """Malformed file on disk; carries a byte offset or line number when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(DropcapError):
    """Non-finite values where finite ones are required."""
