"""Exception types shared across the package.

IO failures are reported with the built-in ``OSError``; everything the
library itself detects derives from ``EmbAdaptError``.
"""


class EmbAdaptError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(EmbAdaptError):
    """A binary file does not follow the expected layout (bad magic,
    unsupported version, truncated or trailing payload)."""


class ValidationError(EmbAdaptError):
    """Structurally well-formed data violates a semantic invariant."""


class ArgumentError(EmbAdaptError, ValueError):
    """An argument is outside the documented domain of an operation."""


class ShapeError(ArgumentError):
    """Array arguments have inconsistent dimensions."""


class InsufficientShotsError(ArgumentError):
    """A class has fewer train images than the requested shot count."""


class DegenerateFeatureError(EmbAdaptError):
    """A blended feature collapsed to the zero vector and cannot be
    renormalized."""


class DivergenceError(EmbAdaptError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
