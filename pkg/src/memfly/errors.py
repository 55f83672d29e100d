"""Exception types raised by the memory engine."""

from __future__ import annotations


class MemflyError(Exception):
    """Base class for all engine errors."""


class DimensionMismatch(MemflyError):
    """A vector's dimension does not match the configured embedding_dim."""


class ZeroVector(MemflyError):
    """A zero-norm vector where a direction is required."""


class EmptyText(MemflyError):
    """Text input was empty after trimming."""


class EmptySurface(MemflyError):
    """Keyword surface was empty after canonicalization."""


class UnknownKeyword(MemflyError):
    """A note references a KeywordId that is not in the keyword table."""


class NotFound(MemflyError):
    """Referenced note/keyword/topic id does not exist."""


class SelfLoop(MemflyError):
    """Attempt to link a note to itself."""


class EmptyGraph(MemflyError):
    """Operation requires at least one weighted edge."""


class RemoteFailure(MemflyError):
    """A remote provider failed after its bounded retries."""


class SchemaVersionMismatch(MemflyError):
    """Snapshot file carries an unsupported schema_version."""


class CorruptSnapshot(MemflyError):
    """Snapshot file failed checksum or structural validation."""


class DatasetFormat(MemflyError):
    """Evaluation dataset file violates the expected schema."""


class ConfigError(MemflyError):
    """Configuration values violate their invariants."""
