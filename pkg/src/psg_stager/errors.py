"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: usage errors exit 1,
data errors exit 2, numeric failures exit 3.
"""


class PsgStagerError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(PsgStagerError, ValueError):
    """Tensor shapes or extents do not satisfy an operation's contract."""


class LayerUsageError(PsgStagerError, RuntimeError):
    """An operation was called out of protocol (e.g. backward without forward)."""


class DataFormatError(PsgStagerError, ValueError):
    """A file could not be parsed. Carries a byte offset when known."""

    def __init__(self, message: str, *, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class FilterDesignError(PsgStagerError, ValueError):
    """A digital filter cannot be designed for the requested band."""


class NumericError(PsgStagerError, RuntimeError):
    """A numeric invariant was violated (NaN/Inf in gradients or losses)."""
