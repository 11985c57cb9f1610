import random

import pytest
import torch

from docmatch.documents import Document, EntityAnnotation
from docmatch.model import ModelConfig, Vocabulary, build_model
from docmatch.synth import SynthConfig, default_schema, synthesize, vocabulary_words


def make_doc(boxes, texts=None, entities=(), doc_id="doc", page=(1000, 1000)):
    """Hand-built document; with the default page, raw boxes land on the grid as-is."""
    if texts is None:
        texts = [f"w{i}" for i in range(len(boxes))]
    words = list(zip(texts, boxes))
    ents = tuple(EntityAnnotation(t, tuple(tuple(s) for s in spans)) for t, spans in entities)
    return Document.from_raw(doc_id=doc_id, page=page, words=words, entities=ents)


def random_geom_doc(rng: random.Random, n: int, doc_id="geo"):
    """Tokens with random grid boxes; geometry-only, no entities."""
    boxes = []
    for _ in range(n):
        x0 = rng.randint(0, 980)
        y0 = rng.randint(0, 980)
        boxes.append((x0, y0, x0 + rng.randint(2, 19), y0 + rng.randint(2, 19)))
    return make_doc(boxes, doc_id=doc_id)


@pytest.fixture(scope="session")
def schema():
    return default_schema()


@pytest.fixture(scope="session")
def vocab():
    return Vocabulary(vocabulary_words())


@pytest.fixture(scope="session")
def tiny_config(schema, vocab):
    return ModelConfig(
        vocab_size=len(vocab), n_entity_types=len(schema), d=32, heads=2, n_queries=4
    )


@pytest.fixture()
def tiny_model(tiny_config, vocab, schema):
    return build_model(tiny_config, vocab, schema, seed=0)


@pytest.fixture(scope="session")
def small_corpus():
    return synthesize(SynthConfig(count=20), seed=11)


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(1234)
    yield
