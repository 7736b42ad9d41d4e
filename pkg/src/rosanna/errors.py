"""Exception types raised across the package."""


class RosannaError(Exception):
    """Base class for all package errors."""


class DatasetError(RosannaError):
    """Malformed or unreadable vector file.

    ``offset`` is the byte offset of the offending record or value, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class IndexFormatError(RosannaError):
    """Index file is truncated, has a bad magic, or an unknown version."""


class EmptyIndexError(RosannaError, ValueError):
    """Search was attempted on an index (or dataset) with no vectors."""


class InvariantViolation(RosannaError):
    """A consistency check failed (CLI exit code 3)."""
