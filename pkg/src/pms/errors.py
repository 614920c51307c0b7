"""Exception hierarchy shared across the package.

The command-line layer maps these onto exit codes: ConfigError to 1,
DataError to 2, NumericError to 3.
"""


class PmsError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(PmsError):
    """Bad configuration key, value, or command-line usage."""


class DataError(PmsError):
    """Input data cannot be read or is unusable."""


class ParseError(DataError):
    """Malformed motion text file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateRangeError(DataError):
    """A coordinate axis has zero range, so normalization is undefined."""


class InsufficientHistoryError(DataError):
    """A window is too short for the requested segmentation."""


class LoadError(DataError):
    """Model container is corrupt, truncated, or of an unknown version."""


class NumericError(PmsError):
    """Numeric computation failed or a numeric contract was violated."""


class ShapeError(NumericError):
    """Operand dimensions are incompatible."""


class RankError(NumericError):
    """Operand has the wrong rank (for example a non-scalar loss)."""


class NonFiniteError(NumericError):
    """A NaN or infinity appeared where finite values are required."""


class EmptySequenceError(NumericError):
    """A recurrent layer was given zero time steps."""


class StatisticsError(NumericError):
    """Batch statistics are undefined for the given batch size."""


class WeightError(NumericError):
    """Fusion or combination weights violate their simplex constraint."""


class PoisonedUpdateError(NumericError):
    """An optimizer update would have written non-finite values."""


class NonDeterministicError(NumericError):
    """Two forward passes of a supposedly deterministic function differ."""


class DivergenceError(NumericError):
    """Training loss exceeded the divergence guard threshold."""
