"""Exception hierarchy shared by every module."""

from __future__ import annotations


class TcDepthError(Exception):
    """Base class for all errors raised by tcdepth."""


class InvalidInputError(TcDepthError, ValueError):
    """An argument violates the documented preconditions."""


class BehindCameraError(InvalidInputError):
    """A point with non-positive z was projected."""


class EmptyDomainError(TcDepthError, ValueError):
    """A statistic was requested over an empty set of pixels or tracks."""


class FormatError(TcDepthError):
    """A file does not follow its declared format.

    ``location`` is a byte offset for binary formats and a 1-based line
    number for text formats.
    """

    def __init__(self, message: str, path=None, location: int | None = None, unit: str = "byte"):
        self.path = None if path is None else str(path)
        self.location = location
        self.unit = unit
        where = []
        if self.path is not None:
            where.append(self.path)
        if location is not None:
            where.append(f"{unit} {location}")
        prefix = ": ".join([", ".join(where)]) + ": " if where else ""
        super().__init__(prefix + message)


class LoadError(TcDepthError):
    """A sequence could not be assembled (missing files, inconsistent frames)."""
