"""Exception hierarchy shared by every dynsnake module."""

from __future__ import annotations

from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from dynsnake.dynamics import Trace


class SnakeError(Exception):
    """Base class for all errors raised by dynsnake."""


class InvalidSpecError(SnakeError):
    """Raised when a field, region or parameter specification is invalid."""


class SizeError(SnakeError):
    """Raised when a contour or matrix is too small for the requested operation."""


class DimensionMismatchError(SnakeError):
    """Raised when a contour and its matrices disagree in size or topology."""


class DefinitenessError(SnakeError):
    """Raised when a matrix that must be symmetric positive definite is not."""


class DegenerateContourError(SnakeError):
    """Raised when a contour has zero length."""


class PgmParseError(SnakeError):
    """Raised when a PGM stream cannot be decoded."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class DomainError(SnakeError):
    """Raised when a point lies outside the domain where the field can be evaluated."""

    def __init__(self, point: Any, index: int | None = None, message: str | None = None):
        x, y = float(point[0]), float(point[1])
        where = f"point ({x:.6g}, {y:.6g})"
        if index is not None:
            where = f"{where} at contour index {index}"
        super().__init__(message or f"{where} is outside the field domain")
        self.point = (x, y)
        self.index = index


class DegenerateFrameError(SnakeError):
    """Raised when the isopotential frame is undefined because the gradient vanishes."""

    def __init__(self, point: Any, gradient_norm: float):
        super().__init__(
            f"gradient norm {gradient_norm:.3g} at ({float(point[0]):.6g}, {float(point[1]):.6g}) "
            "is below the polar-frame floor"
        )
        self.point = (float(point[0]), float(point[1]))
        self.gradient_norm = gradient_norm


class NoValidSampleError(SnakeError):
    """Raised when every sample of a region is degenerate."""

    def __init__(self, skipped: int):
        super().__init__(f"all {skipped} region samples have a degenerate polar frame")
        self.skipped = skipped


class EvolutionError(SnakeError):
    """Raised when a contour point leaves the field domain during evolution.

    The partial trace up to the failing iteration is attached.
    """

    def __init__(self, message: str, iteration: int, index: int | None = None, trace: Trace | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.index = index
        self.trace = trace


class DivergenceError(EvolutionError):
    """Raised when the evolved state becomes non-finite or explodes."""


class CaptureRegionError(SnakeError):
    """Raised when the initial contour does not lie inside the capture region."""


class ConfigError(SnakeError):
    """Raised for configuration parse and validation problems."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")
        self.line = line
        self.key = key
