"""Exception hierarchy shared across the package."""


class QnahmError(Exception):
    """Base class for all package errors."""


class SeriesError(QnahmError):
    """A series was constructed or combined in an invalid way."""


class TruncationError(SeriesError):
    """A coefficient or comparison was requested beyond the known truncation."""


class NotInvertibleError(SeriesError):
    """The series is identically zero up to its truncation and has no inverse."""


class DivergentSumError(QnahmError):
    """The exponent of a lattice sum does not properly diverge; enumeration
    failed to stabilize within the configured doubling limit."""


class EvaluationError(QnahmError):
    """An expression could not be evaluated (unbound parameter, bad factor
    length, non-unit inversion, and similar)."""


class CatalogParseError(QnahmError):
    """Syntax error in an expression or catalog file."""

    def __init__(self, message, line=None, column=None, filename=None):
        self.line = line
        self.column = column
        self.filename = filename
        where = ""
        if filename is not None:
            where += f"{filename}:"
        if line is not None:
            where += f"{line}:"
            if column is not None:
                where += f"{column}:"
        super().__init__(f"{where} {message}" if where else message)
