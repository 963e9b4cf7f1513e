"""Exception types shared across the package."""


class OdclabError(Exception):
    """Base class for all odclab errors."""


class ZeroNormError(OdclabError, ValueError):
    """A vector with (near-)zero L2 norm where a direction is required."""


class DimMismatchError(OdclabError, ValueError):
    """Operands have incompatible dimensions."""


class ShapeMismatchError(DimMismatchError):
    """Array shapes do not line up (alias kept for gradient plumbing)."""


class LabelOutOfRangeError(OdclabError, ValueError):
    """A label falls outside [0, n_classes)."""


class TooFewPointsError(OdclabError, ValueError):
    """Not enough points for the requested number of clusters/seeds."""


class AllEmptyError(OdclabError, ValueError):
    """Every cluster count is zero."""


class UnsatisfiableError(OdclabError, RuntimeError):
    """Cluster-size constraints cannot be met; lower the threshold."""


class NonFiniteError(OdclabError, FloatingPointError):
    """Training produced a NaN/inf loss; aborting loudly."""


class CorruptCheckpointError(OdclabError, ValueError):
    """Checkpoint file is missing, unreadable, or inconsistent."""


class ParseError(OdclabError, ValueError):
    """CSV parse failure. Carries 1-based row/column of the offending cell."""

    def __init__(self, message: str, row: int | None = None, col: int | None = None):
        if row is not None and col is not None:
            message = f"{message} (row {row}, column {col})"
        super().__init__(message)
        self.row = row
        self.col = col


class LengthMismatchError(OdclabError, ValueError):
    """Two label sequences differ in length."""


class TooShortError(OdclabError, ValueError):
    """Input sequence too short for the requested analysis."""
