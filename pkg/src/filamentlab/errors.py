"""Error types shared across the package.

The CLI maps these onto exit codes: validation -> 1, numerical -> 2, io -> 3.
"""


class FilamentLabError(Exception):
    """Base class for all package errors."""


class ValidationError(FilamentLabError, ValueError):
    """Bad inputs: domain violations, shape mismatches, missing preconditions."""


class NumericalError(FilamentLabError, RuntimeError):
    """A computation failed to converge or left its regime of validity."""


class DataIOError(FilamentLabError, OSError):
    """Reading or writing data files failed."""
