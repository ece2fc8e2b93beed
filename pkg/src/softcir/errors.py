"""Typed errors shared across the toolkit.

Every failure mode a caller is expected to handle has its own class so the
CLI can map families to exit codes (validation -> 1, provider -> 2,
I/O or file format -> 3).
"""


class SoftCirError(Exception):
    """Base class for all toolkit errors."""


# ---------------------------------------------------------------------------
# Input validation


class ValidationError(SoftCirError):
    """Bad caller-supplied data or configuration."""


class DimensionMismatch(ValidationError):
    pass


class DuplicateId(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


class ZeroVector(ValidationError):
    pass


class LambdaOutOfRange(ValidationError):
    pass


class IdSetMismatch(ValidationError):
    pass


class EmptyModificationText(ValidationError):
    pass


class CaptionCountMismatch(ValidationError):
    pass


class MissingEmbedding(ValidationError):
    pass


class EmptyGroup(ValidationError):
    pass


class InsufficientTargets(ValidationError):
    pass


class EmptySubsetIntersection(ValidationError):
    pass


class MissingQueryOutcome(ValidationError):
    pass


class SchemaViolation(ValidationError):
    """Structurally valid JSON whose content breaks the declared schema."""


# ---------------------------------------------------------------------------
# Provider / transport


class ProviderError(SoftCirError):
    """LLM provider failure after the retry policy has been exhausted."""


class AuthError(ProviderError):
    """401/403 from the provider; never retried."""


class RateLimited(ProviderError):
    """429 still failing after the configured retries."""


class Timeout(ProviderError):
    """Per-attempt timeout elapsed."""


class TransportError(ProviderError):
    """Network failure or a response that is not a chat completion."""


class MalformedResponse(ProviderError):
    """Provider replied, but the content cannot be parsed as required."""


# ---------------------------------------------------------------------------
# Storage


class FormatError(SoftCirError):
    """On-disk payload does not conform to the declared file format."""
