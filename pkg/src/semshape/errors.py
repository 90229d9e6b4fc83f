"""Exception types shared across the package.

Every error raised on a contract violation derives from :class:`SemShapeError`
so callers (and the CLI) can separate usage problems from numerical failures.
"""

from __future__ import annotations


class SemShapeError(Exception):
    """Base class for all package-specific errors."""


class SpaceMismatchError(SemShapeError):
    """Two clouds tagged with different coordinate frames were combined."""


class EmptyCloudError(SemShapeError):
    """An operation that needs at least one point received an empty cloud."""


class NoInliersError(SemShapeError):
    """A filtered point set came back empty where survivors were required."""


class DegenerateGeometryError(SemShapeError):
    """Point configuration too degenerate to solve (collinear, rank-deficient)."""


class TooSparseError(SemShapeError):
    """Fewer usable points/pairs than the minimum the stage needs."""


class FormatError(SemShapeError):
    """A file did not parse; carries a byte offset when one is known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(SemShapeError):
    """Run configuration rejected (unknown key, bad value, missing file)."""


class NumericalError(SemShapeError):
    """An optimization or solve produced non-finite or unusable numbers."""
