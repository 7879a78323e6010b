"""
Error hierarchy shared by every module.

Each error class carries the process exit code the command line maps it to.
"""

from typing import Optional


class PointSegError(Exception):
    """Base class for all errors raised by the segmentation engine."""

    exit_code: int = 2

    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message


class UsageError(PointSegError):
    """Bad flags, bad configuration lines or unknown profiles."""

    exit_code = 1


class DataError(PointSegError):
    """Malformed, truncated or unreadable input data."""

    exit_code = 2


class ShapeError(DataError):
    """Tensor extents that do not conform to an operation's contract."""


class ParameterError(DataError):
    """A parameter set or optimizer state inconsistent with the graph wiring."""

    def __init__(self, message: str, layer_id: Optional[str] = None) -> None:
        super().__init__(message)
        self.layer_id = layer_id


class RansacError(DataError):
    """Plane fitting could not produce an acceptable model."""


class NumericalError(PointSegError):
    """Non-finite values appeared during training."""

    exit_code = 3

    def __init__(self, message: str, layer_id: Optional[str] = None) -> None:
        super().__init__(message)
        self.layer_id = layer_id
