"""Exception taxonomy shared across the package."""

from __future__ import annotations


class TriviewError(Exception):
    """Base class for all package errors."""


class ConfigError(TriviewError):
    """Invalid or inconsistent run configuration."""


class ParseError(TriviewError):
    """Input file could not be parsed into the expected shape."""


class UnknownFormatError(TriviewError):
    """Benchmark format name has no registered loader."""


class DuplicateIdError(TriviewError):
    """Two evidence units were given the same identifier."""


class EmptyTextError(TriviewError):
    """An evidence unit has no text after whitespace normalization."""


class UnknownUnitError(TriviewError):
    """Evidence unit id is not registered with the graph."""


class UnknownEntityError(TriviewError):
    """Entity key does not resolve to a graph node."""


class DanglingSourceError(TriviewError):
    """A retrieval hit references a graph object that does not resolve."""


class SchemaVersionError(TriviewError):
    """Persisted artifact has an unsupported or unreadable schema."""


class DimensionMismatchError(TriviewError):
    """Embedding dimensions disagree within a batch or with an index."""


class ModelError(TriviewError):
    """Model call failed after retries, or no scripted entry matched."""


class AuthError(ModelError):
    """Endpoint rejected the credentials."""


class ProviderError(ModelError):
    """Embedding endpoint failed after retries."""


class UnparseableOutputError(TriviewError):
    """Model output could not be parsed, even after one repair re-prompt.

    Carries the raw text of the last attempt so callers can apply their
    stated fallbacks.
    """

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class InvalidPlanError(TriviewError):
    """Decomposition payload violates the plan contract."""


class MissingBindingError(TriviewError):
    """A placeholder references a step whose answer is absent or empty."""

    def __init__(self, step_id: int):
        super().__init__(f"no usable answer for placeholder <dep:{step_id}>")
        self.step_id = step_id


class InvalidQueryError(TriviewError):
    """Query is empty or whitespace-only."""


class EmptyInputError(TriviewError):
    """An aggregate was requested over zero records."""
