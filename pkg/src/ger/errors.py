"""Exception types shared across the package."""


class GerError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(GerError):
    """A file does not match the expected schema (malformed JSON, missing field)."""


class ValidationError(GerError):
    """Loaded data violates a structural invariant."""


class ConversionError(GerError):
    """An external dataset could not be converted."""


class CorefError(GerError):
    """A coreference cluster references data outside the story."""


class UnknownNode(GerError):
    """A node id does not exist in the knowledge graph."""


class ProviderError(GerError):
    """A remote provider failed after exhausting its retry budget."""


class EmptyText(GerError):
    """Text input was empty after normalization."""


class DimensionMismatch(GerError):
    """Two vectors of different dimensions were combined."""


class TemplateError(GerError):
    """A prompt template was rendered with unbound placeholders."""


class ParseError(GerError):
    """A provider response contained no parseable answer."""


class MockScriptError(GerError):
    """A scripted provider received a prompt it has no response for."""


class MissingPrediction(GerError):
    """A precomputed prediction file does not cover a requested instance."""


class PipelineError(GerError):
    """An instance could not be processed end to end."""


class KeyMismatch(GerError):
    """Prediction and gold sets are not aligned on the same instance keys."""


class ConfigError(GerError):
    """A run configuration is invalid or incomplete."""
