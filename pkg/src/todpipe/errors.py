"""Exception types shared across the pipeline."""


class TodError(Exception):
    """Base class for all todpipe errors."""


class ParseError(TodError):
    """A corpus or config line could not be parsed at all."""


class SchemaError(TodError):
    """A record parsed but is missing fields or has wrong types."""


class ValidationError(TodError):
    """A record parsed and typed correctly but violates an invariant."""


class SpecError(TodError):
    """A synthetic-corpus specification is out of range."""


class ConfigError(TodError):
    """A run/training configuration value is invalid or unknown."""


class DegenerateInputError(TodError):
    """Numerically degenerate input, e.g. a zero-norm encoding."""


class UnknownNodeError(TodError):
    """A slot-tree node name does not exist."""


class UnknownLabelError(TodError):
    """A label name is not part of the active label space."""


class ShapeMismatchError(TodError):
    """Two arrays that must agree in shape do not."""


class EmptyDatasetError(TodError):
    """An operation that needs at least one example got none."""


class OversizeContextError(TodError):
    """A serialized context cannot fit the model window even after truncation."""


class ConstraintTooLongError(TodError):
    """A decoding constraint is longer than the generation budget."""


class LengthMismatchError(TodError):
    """Paired per-turn lists have different lengths."""


class MissingArtifactError(TodError):
    """A required checkpoint or data file is absent."""
