"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: DataError -> 3, NumericError -> 4.
"""


class PairsenseError(Exception):
    """Base class for all package errors."""


class DataError(PairsenseError):
    """Bad input data: missing files, malformed records, invalid arguments."""


class ParseError(DataError):
    """A record could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(DataError):
    """A record parsed but violates the declared feature schema."""


class NumericError(PairsenseError):
    """Training or evaluation produced non-finite values."""
