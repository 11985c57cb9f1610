"""Exception types shared across the package."""


class DocmatchError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(DocmatchError, ValueError):
    """A document, token, or annotation violates a structural invariant."""


class SchemaError(DocmatchError, ValueError):
    """An entity schema is malformed (duplicate or unknown type ids)."""


class DatasetError(DocmatchError, ValueError):
    """A dataset file cannot be parsed; message carries the line number."""


class LabelError(DocmatchError, ValueError):
    """Gold labels or targets are inconsistent with the document."""


class ConfigError(DocmatchError, ValueError):
    """A model or training configuration is invalid."""


class CheckpointError(DocmatchError, ValueError):
    """A checkpoint cannot be loaded (version or shape mismatch)."""


class TrainingError(DocmatchError, RuntimeError):
    """Training aborted, e.g. on a non-finite loss."""
