"""Few-shot key information extraction from OCR word tokens via generated matcher vectors."""

from .documents import (
    Document,
    EntityAnnotation,
    EntitySchema,
    EntityType,
    TagSpace,
    WordToken,
    build_tag_space,
    load_jsonl,
    normalize_box,
    save_jsonl,
)
from .synth import SynthConfig, default_schema, synthesize, vocabulary_words

__all__ = [
    "Document",
    "EntityAnnotation",
    "EntitySchema",
    "EntityType",
    "TagSpace",
    "WordToken",
    "build_tag_space",
    "load_jsonl",
    "normalize_box",
    "save_jsonl",
    "SynthConfig",
    "default_schema",
    "synthesize",
    "vocabulary_words",
]
