"""Exception hierarchy shared by every pager module."""


class PagerError(Exception):
    """Base class for all library errors."""


class InvalidInputError(PagerError, ValueError):
    """Arguments violate a documented precondition."""


class InvalidStateError(PagerError, RuntimeError):
    """An object is used before it has been trained or loaded."""


class DataFormatError(PagerError, ValueError):
    """A dataset file does not match its declared binary or text layout."""


class ArchiveError(PagerError):
    """Model archive could not be read."""


class CorruptArchiveError(ArchiveError):
    """Archive is truncated, malformed, or fails its checksum."""


class UnsupportedVersionError(ArchiveError):
    """Archive was written by an incompatible format version."""
