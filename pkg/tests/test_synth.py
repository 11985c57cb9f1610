import pytest

from docmatch.documents import save_jsonl
from docmatch.errors import ValidationError
from docmatch.synth import SynthConfig, default_schema, synthesize, vocabulary_words


def _jsonl_bytes(docs, tmp_path, name):
    p = tmp_path / name
    save_jsonl(docs, p)
    return p.read_bytes()


def test_determinism_byte_identical(tmp_path):
    a = synthesize(SynthConfig(count=10), seed=7)
    b = synthesize(SynthConfig(count=10), seed=7)
    assert _jsonl_bytes(a, tmp_path, "a.jsonl") == _jsonl_bytes(b, tmp_path, "b.jsonl")


def test_different_seeds_differ(tmp_path):
    a = synthesize(SynthConfig(count=10), seed=7)
    b = synthesize(SynthConfig(count=10), seed=8)
    assert _jsonl_bytes(a, tmp_path, "a.jsonl") != _jsonl_bytes(b, tmp_path, "b.jsonl")


def test_tables_only_have_repeated_instances():
    cfg = SynthConfig(count=25, layout_mix={"table": 1.0})
    for doc in synthesize(cfg, seed=2):
        assert any(len(e.spans) >= 2 for e in doc.entities), doc.doc_id


def test_layout_mix_distribution():
    mix = {"horizontal": 0.4, "vertical": 0.3, "table": 0.3}
    docs = synthesize(SynthConfig(count=1000, layout_mix=mix), seed=5)
    for name, want in mix.items():
        got = sum(d.doc_id.endswith(name) for d in docs) / len(docs)
        assert abs(got - want) <= 0.05, (name, got)


def test_all_docs_admitted_and_in_vocab():
    vocab = set(vocabulary_words())
    for doc in synthesize(SynthConfig(count=60), seed=9):
        assert doc.admitted
        assert {t.text for t in doc.tokens} <= vocab


def test_instances_contiguous_in_feed_order():
    # BIO round trips rely on instance tokens being adjacent in feed order
    for doc in synthesize(SynthConfig(count=60), seed=13):
        for ent in doc.entities:
            for span in ent.spans:
                assert list(span) == list(range(span[0], span[0] + len(span)))


def test_bad_layout_mix_rejected():
    with pytest.raises(ValidationError):
        SynthConfig(count=1, layout_mix={"diagonal": 1.0})
    with pytest.raises(ValidationError):
        SynthConfig(count=1, layout_mix={"table": 0.0})


def test_schema_types_cover_generator_output():
    type_ids = set(default_schema().type_ids)
    docs = synthesize(SynthConfig(count=40), seed=21)
    seen = {e.type_id for d in docs for e in d.entities}
    assert seen <= type_ids
    assert "item_name" in seen and "total" in seen
