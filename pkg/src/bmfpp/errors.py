"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 1, DataError (and
subclasses) -> 2, NumericalError (and subclasses) -> 3.
"""


class BmfppError(Exception):
    """Base class for all package errors."""


class ConfigError(BmfppError):
    """Invalid configuration or arguments."""


class DataError(BmfppError):
    """Problem with input data (missing files, bad contents, shape mismatch)."""


class ParseError(DataError):
    """Malformed input file; carries the offending 1-based line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CoverageError(DataError):
    """Predictions do not cover the evaluation set."""


class NumericalError(BmfppError):
    """Numerical failure during sampling or aggregation."""


class CholeskyError(NumericalError):
    """Matrix not positive definite; carries the failing pivot index."""

    def __init__(self, pivot):
        super().__init__(f"matrix is not positive definite (pivot {pivot} non-positive)")
        self.pivot = pivot


class AggregationError(NumericalError):
    """Posterior division produced an irrecoverably non-PD precision."""
