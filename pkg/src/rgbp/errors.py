"""Exception types shared across the package.

Every loader or validator raises one of these instead of repairing input.
Errors that point at a place in a file or document carry it in ``location``.
"""

from __future__ import annotations


class RGBPError(Exception):
    """Base class; ``location`` is a JSON path, byte offset or entry name."""

    def __init__(self, message: str, location: str | int | None = None):
        self.location = location
        if location is not None:
            message = f"{message} (at {location})"
        super().__init__(message)


class ShapeError(RGBPError, ValueError):
    pass


class ValidationError(RGBPError, ValueError):
    pass


class PatternError(RGBPError, ValueError):
    pass


class AlignmentError(ValidationError):
    pass


class FormatError(RGBPError, ValueError):
    pass


class PlacementError(RGBPError, RuntimeError):
    pass
