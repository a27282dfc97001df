"""Exception hierarchy.

Validation problems (bad input, inconsistent specs) derive from ``ValueError``
so callers can treat them uniformly; numerical failures during fitting derive
from :class:`NumericalError`.
"""


class ClustregError(Exception):
    """Base class for all package errors."""


class ValidationError(ClustregError, ValueError):
    """Inconsistent or malformed input (specs, partitions, control objects)."""


class DataError(ValidationError):
    """A CSV/label file could not be parsed.

    ``row`` and ``column`` are 1-based file coordinates (header is row 1) when
    known.
    """

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class NumericalError(ClustregError):
    """Fitting failed for numerical reasons."""


class DegenerateFitError(NumericalError):
    """A covariance matrix collapsed below the eigenvalue floor."""

    def __init__(self, message, component=None):
        if component is not None:
            message = f"{message} (component {component})"
        super().__init__(message)
        self.component = component


class RankDeficientError(NumericalError, ValidationError):
    """The regressor matrix (with intercept) is not of full column rank."""

    def __init__(self, message, columns=()):
        self.columns = tuple(columns)
        if self.columns:
            message = f"{message}; linearly dependent columns: {list(self.columns)}"
        super().__init__(message)


class BlockFitError(ClustregError):
    """A block of a joint model failed to fit; wraps the original error."""

    def __init__(self, block, cause):
        super().__init__(f"block {block!r}: {cause}")
        self.block = block
        self.cause = cause


class BudgetExceededError(ClustregError):
    """A combinatorial or evaluation budget was exhausted."""
