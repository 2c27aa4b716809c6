"""Exception types raised across the package.

Every error the library raises deliberately derives from SomTreeError so
callers can catch one base class at API boundaries (the CLI maps them to
exit code 3).
"""


class SomTreeError(Exception):
    """Base class for all somtree errors."""


class DimensionMismatch(SomTreeError):
    """Vector lengths disagree with each other or with the dataset."""


class NonFinite(SomTreeError):
    """An input contains NaN or infinity."""


class ZeroVector(SomTreeError):
    """Cosine distance requested against a zero-norm vector."""


class EmptyDataset(SomTreeError):
    """An operation that needs at least one record got none."""


class EmptyIndex(SomTreeError):
    """A query hit an index that holds no records."""


class IndexOutOfRange(SomTreeError):
    """A node index is not valid for the given topology."""


class InvalidIndex(SomTreeError):
    """A structural invariant of the tree index is broken."""


class DuplicateId(SomTreeError):
    """A record id collides with one already in the store."""


class UnlabeledData(SomTreeError):
    """Classification requested but neighbors carry no labels."""


class MissingResponse(SomTreeError):
    """Regression requested but a neighbor carries no response value."""


class BadMagic(SomTreeError):
    """A binary file does not start with the expected magic number."""


class CountMismatch(SomTreeError):
    """Image and label files declare different item counts."""


class TruncatedFile(SomTreeError):
    """A binary file ended before the declared payload was read."""


class LineCountMismatch(SomTreeError):
    """Parallel corpus files have different numbers of lines."""


class FormatVersionMismatch(SomTreeError):
    """An index file was written with an unsupported format version."""


class ChecksumMismatch(SomTreeError):
    """An index file failed its integrity check (corrupt or truncated)."""
