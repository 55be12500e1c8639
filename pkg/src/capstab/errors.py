"""Exception hierarchy shared across the package.

The CLI maps these to stable exit codes: usage errors exit 1, data errors
exit 2, numeric failures exit 3.
"""


class CapstabError(Exception):
    """Base class for all package errors."""


class ShapeError(CapstabError):
    """Operands have inconsistent or unsupported shapes."""


class DataError(CapstabError):
    """Malformed or invalid input data (files, datasets, checkpoints)."""


class NumericError(CapstabError):
    """Numerical failure: divergence, non-finite values, failed checks."""


class UsageError(CapstabError):
    """Invalid invocation or parameters."""
