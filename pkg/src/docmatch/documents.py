"""Documents, word tokens, entity schemas, tag spaces, and the JSONL dataset format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError, SchemaError, ValidationError

GRID = 1000
MIN_TRAIN_TOKENS = 5
MAX_TRAIN_TOKENS = 512

Box = tuple[int, int, int, int]


def _scale_span(lo: int, hi: int, extent: int) -> tuple[int, int]:
    s0 = lo * GRID // extent
    s1 = hi * GRID // extent
    if s1 <= s0:
        # degenerate span: widen by one raw pixel expressed on the grid
        widen = max(1, GRID // extent)
        s1 = s0 + widen
        if s1 > GRID:
            s0, s1 = GRID - widen, GRID
    return s0, s1


def normalize_box(raw_box: Box, page: tuple[int, int]) -> Box:
    """Scale a raw pixel rectangle onto the 0..1000 grid.

    Coordinates are multiplied by 1000/extent and floored. Boxes that
    collapse to zero width or height are widened so ordering x0 < x1,
    y0 < y1 always holds on the grid.
    """
    w, h = page
    if w <= 0 or h <= 0:
        raise ValidationError(f"page extent must be positive, got {page}")
    x0, y0, x1, y1 = raw_box
    if not (0 <= x0 <= x1 <= w and 0 <= y0 <= y1 <= h):
        raise ValidationError(f"box {tuple(raw_box)} is inverted or outside page {page}")
    nx0, nx1 = _scale_span(x0, x1, w)
    ny0, ny1 = _scale_span(y0, y1, h)
    return (nx0, ny0, nx1, ny1)


@dataclass(frozen=True)
class WordToken:
    """One OCR word: text, normalized box, original pixel box, feed position."""

    text: str
    box: Box
    index: int
    raw_box: Box

    def __post_init__(self) -> None:
        if not self.text:
            raise ValidationError(f"token {self.index}: empty text")
        x0, y0, x1, y1 = self.box
        if not (0 <= x0 < x1 <= GRID and 0 <= y0 < y1 <= GRID):
            raise ValidationError(
                f"token {self.index} ({self.text!r}): bad normalized box {self.box}"
            )
        if self.index < 0:
            raise ValidationError(f"token {self.text!r}: negative index {self.index}")

    @classmethod
    def from_raw(cls, text: str, raw_box: Box, index: int, page: tuple[int, int]) -> "WordToken":
        try:
            box = normalize_box(raw_box, page)
        except ValidationError as exc:
            raise ValidationError(f"token {index} ({text!r}): {exc}") from None
        return cls(text=text, box=box, index=index, raw_box=tuple(raw_box))

    @property
    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.box
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)


@dataclass(frozen=True)
class EntityAnnotation:
    """Gold annotation for one entity type: one token-index list per instance."""

    type_id: str
    spans: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "spans", tuple(tuple(s) for s in self.spans))
        for span in self.spans:
            if not span:
                raise ValidationError(f"entity {self.type_id!r}: empty instance span")


@dataclass
class Document:
    """An ordered token list with gold entities; immutable after construction."""

    doc_id: str
    page: tuple[int, int]
    tokens: tuple[WordToken, ...]
    entities: tuple[EntityAnnotation, ...]

    def __post_init__(self) -> None:
        self.tokens = tuple(self.tokens)
        self.entities = tuple(self.entities)
        for pos, tok in enumerate(self.tokens):
            if tok.index != pos:
                raise ValidationError(
                    f"doc {self.doc_id}: token at position {pos} has index {tok.index}; "
                    "indices must be the contiguous sequence 0..N-1"
                )
        seen: dict[int, str] = {}
        for ent in self.entities:
            for span in ent.spans:
                for idx in span:
                    if not 0 <= idx < len(self.tokens):
                        raise ValidationError(
                            f"doc {self.doc_id}: entity {ent.type_id!r} references token {idx} "
                            f"outside 0..{len(self.tokens) - 1}"
                        )
                    if idx in seen:
                        raise ValidationError(
                            f"doc {self.doc_id}: token {idx} appears in both {seen[idx]!r} "
                            f"and {ent.type_id!r} instances"
                        )
                    seen[idx] = ent.type_id

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def admitted(self) -> bool:
        """True when the document is admitted to training (5..512 tokens)."""
        return MIN_TRAIN_TOKENS <= len(self.tokens) <= MAX_TRAIN_TOKENS

    @property
    def skip_training(self) -> bool:
        return not self.admitted

    def doubled_centers(self) -> np.ndarray:
        """(N, 2) int64 array of doubled box centers (x0+x1, y0+y1); cached."""
        arr = self.__dict__.get("_centers2")
        if arr is None:
            arr = np.array(
                [(t.box[0] + t.box[2], t.box[1] + t.box[3]) for t in self.tokens],
                dtype=np.int64,
            ).reshape(len(self.tokens), 2)
            self.__dict__["_centers2"] = arr
        return arr

    def text_of(self, indices) -> str:
        return " ".join(self.tokens[i].text for i in indices)

    def gold_items(self) -> list[tuple[str, str, tuple[int, ...]]]:
        """(type_id, value string, token indices) for every gold entity instance."""
        items = []
        for ent in self.entities:
            for span in ent.spans:
                items.append((ent.type_id, self.text_of(span), tuple(span)))
        return items

    def instances_of(self, type_id: str) -> list[tuple[int, ...]]:
        for ent in self.entities:
            if ent.type_id == type_id:
                return [tuple(s) for s in ent.spans]
        return []

    @classmethod
    def from_raw(
        cls,
        doc_id: str,
        page: tuple[int, int],
        words: list[tuple[str, Box]],
        entities: list[EntityAnnotation] | tuple[EntityAnnotation, ...] = (),
    ) -> "Document":
        tokens = tuple(
            WordToken.from_raw(text, raw_box, i, page) for i, (text, raw_box) in enumerate(words)
        )
        return cls(doc_id=doc_id, page=tuple(page), tokens=tokens, entities=tuple(entities))


@dataclass(frozen=True)
class EntityType:
    type_id: str
    prompt_name: str


@dataclass(frozen=True)
class EntitySchema:
    """Ordered entity types; the order fixes prompt ids and tag columns."""

    types: tuple[EntityType, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "types", tuple(self.types))
        ids = [t.type_id for t in self.types]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise SchemaError(f"duplicate entity type ids: {dupes}")

    def __len__(self) -> int:
        return len(self.types)

    @property
    def type_ids(self) -> tuple[str, ...]:
        return tuple(t.type_id for t in self.types)

    def type_index(self, type_id: str) -> int:
        for i, t in enumerate(self.types):
            if t.type_id == type_id:
                return i
        raise SchemaError(f"unknown entity type {type_id!r}")

    def to_records(self) -> list[dict]:
        return [{"type": t.type_id, "prompt_name": t.prompt_name} for t in self.types]

    @classmethod
    def from_records(cls, records: list[dict]) -> "EntitySchema":
        return cls(tuple(EntityType(r["type"], r.get("prompt_name", r["type"])) for r in records))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_records(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "EntitySchema":
        return cls.from_records(json.loads(Path(path).read_text()))


OUTSIDE_TAG = "O"


@dataclass(frozen=True)
class TagSpace:
    """Ordered tag list [O, B-t1, I-t1, ...]; one matcher-vector column per tag."""

    tags: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.tags)

    def begin_index(self, type_id: str) -> int:
        return self.tags.index(f"B-{type_id}")

    def inside_index(self, type_id: str) -> int:
        return self.tags.index(f"I-{type_id}")

    def kind_of(self, tag_index: int) -> tuple[str, str | None]:
        """("O", None) or ("B"|"I", type_id) for a tag column."""
        tag = self.tags[tag_index]
        if tag == OUTSIDE_TAG:
            return (OUTSIDE_TAG, None)
        kind, type_id = tag.split("-", 1)
        return (kind, type_id)


def build_tag_space(schema: EntitySchema) -> TagSpace:
    """O first, then a B/I pair per schema type, in schema order."""
    tags = [OUTSIDE_TAG]
    for t in schema.types:
        tags.append(f"B-{t.type_id}")
        tags.append(f"I-{t.type_id}")
    return TagSpace(tuple(tags))


def _doc_to_record(doc: Document) -> dict:
    return {
        "doc_id": doc.doc_id,
        "page": list(doc.page),
        "tokens": [
            {"text": t.text, "box": list(t.raw_box), "index": t.index} for t in doc.tokens
        ],
        "entities": [
            {"type": e.type_id, "spans": [list(s) for s in e.spans]} for e in doc.entities
        ],
    }


def _doc_from_record(rec: dict) -> Document:
    page = tuple(rec["page"])
    token_recs = sorted(rec["tokens"], key=lambda r: r["index"])
    tokens = tuple(
        WordToken.from_raw(r["text"], tuple(r["box"]), r["index"], page) for r in token_recs
    )
    entities = tuple(
        EntityAnnotation(e["type"], tuple(tuple(s) for s in e["spans"]))
        for e in rec.get("entities", [])
    )
    return Document(doc_id=rec["doc_id"], page=page, tokens=tokens, entities=entities)


def save_jsonl(docs, path) -> None:
    """One document per line; boxes are written as raw pixels."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(_doc_to_record(doc), separators=(",", ":")) + "\n")


def load_jsonl(path) -> list[Document]:
    """Parse a JSONL corpus; normalization to the 0..1000 grid happens here."""
    docs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}: line {lineno}: invalid JSON ({exc})") from None
            try:
                docs.append(_doc_from_record(rec))
            except (KeyError, TypeError) as exc:
                raise DatasetError(f"{path}: line {lineno}: missing or bad field ({exc})") from None
            except ValidationError as exc:
                raise ValidationError(f"{path}: line {lineno}: {exc}") from None
    return docs
