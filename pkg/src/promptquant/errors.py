"""Exception types shared across the toolkit.

Every error carries a stable ``code`` string (its class name) so the CLI can
emit machine-parseable error records.
"""


class PromptQuantError(Exception):
    """Base class for all toolkit errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


class NonFinite(PromptQuantError):
    """Input contains NaN or Inf values."""


class DegenerateTensor(PromptQuantError):
    """Tensor cannot support the requested operation (e.g. sigma == 0,
    or fewer distinct values than requested cluster centers)."""


class LengthMismatch(PromptQuantError):
    """Two arrays that must have equal length do not."""


class IndexOverflow(PromptQuantError):
    """A codebook index does not fit in the requested bit width."""


class BadMagic(PromptQuantError):
    """Serialized blob does not start with the expected magic bytes."""


class UnsupportedVersion(PromptQuantError):
    """Serialized blob has a format version this build does not understand."""


class Truncated(PromptQuantError):
    """Serialized blob ends before all declared fields are present."""


class ZeroNorm(PromptQuantError):
    """A vector with zero norm was passed where cosine similarity is needed."""


class BadConfig(PromptQuantError):
    """Invalid task or method configuration."""


class NonPositive(PromptQuantError):
    """A strictly positive quantity was zero or negative."""


class EmptyTensor(PromptQuantError):
    """An operation that needs at least one element got an empty tensor."""
