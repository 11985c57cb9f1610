"""Synthetic key-value forms and receipt-like documents over a closed vocabulary."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .documents import Document, EntityAnnotation, EntitySchema, EntityType
from .errors import ValidationError

FIRST_NAMES = (
    "alice bob carol david emma frank grace henry iris jack karen liam maria noah "
    "olivia peter quinn rosa sam tina umar vera walter xenia yusuf zoe andre bella "
    "carlos diana edgar fiona gavin hana ivan julia kenji lena marco nina oscar priya "
    "raul sofia theo ursula victor wendy yara zack amara bruno celia dario elsa felix "
    "gita hugo ines jonas"
).split()

LAST_NAMES = (
    "smith jones brown taylor wilson davis clark lewis walker hall young allen king "
    "wright scott green baker adams nelson hill campbell mitchell roberts carter "
    "phillips evans turner torres parker collins edwards stewart flores morris murphy "
    "cook rogers morgan peterson cooper reed bailey bell gomez kelly howard ward cox "
    "diaz richardson wood watson brooks bennett gray james reyes cruz hughes price "
    "myers long"
).split()

PRODUCT_WORDS = (
    "coffee tea latte mocha espresso juice soda water milk bread bagel muffin donut "
    "croissant sandwich burger pizza pasta salad soup rice noodles chicken beef pork "
    "fish tofu egg cheese butter yogurt apple banana orange grape lemon mango melon "
    "berry cake pie cookie brownie candy chips nuts popcorn cereal granola honey jam "
    "sauce salt pepper sugar flour oil vinegar wrap taco burrito sushi ramen curry "
    "steak fries rings toast pancake waffle syrup iced hot small large double"
).split()

KEY_WORDS = (
    "vendor date invoice no total amount item qty price name sold by issued on ref "
    "sum due order table server cashier"
).split()

FILLER_WORDS = (
    "thank you welcome receipt store shop market street avenue road city center "
    "visit again please keep this copy original tax register till open daily from "
    "until phone tel fax www com mail info customer service returns within days "
    "member points earned balance change tendered card cash approved terminal"
).split()

MONTH_WORDS = "jan feb mar apr may jun jul aug sep oct nov dec".split()
YEAR_WORDS = tuple(str(y) for y in range(2018, 2028))
INT_WORDS = tuple(str(i) for i in range(1000))
PRICE_WORDS = tuple(
    f"{d}.{c:02d}" for d in range(1, 41) for c in (0, 25, 50, 75, 90, 99)
)

LAYOUTS = ("horizontal", "vertical", "table")


def vocabulary_words() -> tuple[str, ...]:
    """The closed word vocabulary every synthetic token is drawn from."""
    seen: dict[str, None] = {}
    for group in (
        FIRST_NAMES,
        LAST_NAMES,
        PRODUCT_WORDS,
        KEY_WORDS,
        FILLER_WORDS,
        MONTH_WORDS,
        YEAR_WORDS,
        INT_WORDS,
        PRICE_WORDS,
    ):
        for w in group:
            seen.setdefault(w, None)
    return tuple(seen)


def default_schema() -> EntitySchema:
    return EntitySchema(
        (
            EntityType("vendor", "vendor name"),
            EntityType("date", "issue date"),
            EntityType("invoice_no", "invoice number"),
            EntityType("total", "total amount"),
            EntityType("item_name", "line item name"),
            EntityType("item_qty", "line item quantity"),
            EntityType("item_price", "line item price"),
        )
    )


@dataclass
class SynthConfig:
    count: int
    schema: EntitySchema = field(default_factory=default_schema)
    layout_mix: dict[str, float] = field(
        default_factory=lambda: {"horizontal": 0.3, "vertical": 0.2, "table": 0.5}
    )
    jitter: int = 3
    page: tuple[int, int] = (1000, 1400)
    field_dropout: float = 0.15

    def __post_init__(self) -> None:
        unknown = set(self.layout_mix) - set(LAYOUTS)
        if unknown:
            raise ValidationError(f"unknown layouts in mix: {sorted(unknown)}")
        if not any(w > 0 for w in self.layout_mix.values()):
            raise ValidationError("layout mix has no positive weight")


class _Page:
    """Accumulates words top-to-bottom, left-to-right; feed order = emission order."""

    def __init__(self, page: tuple[int, int], jitter: int, rng: random.Random):
        self.page = page
        self.jitter = jitter
        self.rng = rng
        self.words: list[tuple[str, tuple[int, int, int, int]]] = []

    def _jit(self) -> int:
        j = self.jitter
        return self.rng.randint(-j, j) if j > 0 else 0

    def put(self, text: str, x: int, y: int) -> tuple[int, int]:
        """Place one word; returns (next_x, index of the emitted word)."""
        w, h = 7 * len(text) + 6, 18
        x0 = max(0, min(x + self._jit(), self.page[0] - w - 1))
        y0 = max(0, min(y + self._jit(), self.page[1] - h - 1))
        self.words.append((text, (x0, y0, x0 + w, y0 + h)))
        return x0 + w + 10, len(self.words) - 1

    def put_line(self, texts: list[str], x: int, y: int) -> list[int]:
        indices = []
        for text in texts:
            x, idx = self.put(text, x, y)
            indices.append(idx)
        return indices


def _value_tokens(field_id: str, rng: random.Random) -> list[str]:
    if field_id == "vendor":
        if rng.random() < 0.5:
            return [rng.choice(FIRST_NAMES), rng.choice(LAST_NAMES)]
        return [rng.choice(LAST_NAMES)]
    if field_id == "date":
        return [str(rng.randint(1, 28)), rng.choice(MONTH_WORDS), rng.choice(YEAR_WORDS)]
    if field_id == "invoice_no":
        return [str(rng.randint(100, 999))]
    if field_id == "total":
        return [rng.choice(PRICE_WORDS)]
    raise ValidationError(f"no value generator for field {field_id!r}")


_FIELD_KEYS = {
    "vendor": ["vendor"],
    "date": ["date"],
    "invoice_no": ["invoice", "no"],
    "total": ["total"],
}

_SINGLETON_FIELDS = ("vendor", "date", "invoice_no", "total")


def _pick_fields(rng: random.Random, dropout: float) -> list[str]:
    kept = [f for f in _SINGLETON_FIELDS if rng.random() >= dropout]
    if len(kept) < 2:
        kept = list(_SINGLETON_FIELDS[:2])
    return kept


def _product_name(rng: random.Random) -> list[str]:
    if rng.random() < 0.4:
        a, b = rng.sample(PRODUCT_WORDS, 2)
        return [a, b]
    return [rng.choice(PRODUCT_WORDS)]


def _build_horizontal(page: _Page, rng: random.Random, dropout: float) -> dict[str, list[list[int]]]:
    y = 40
    page.put_line(rng.sample(FILLER_WORDS, rng.randint(1, 3)), 60, y)
    y += 50
    spans: dict[str, list[list[int]]] = {}
    for f in _pick_fields(rng, dropout):
        x = 60
        for key in _FIELD_KEYS[f]:
            x, _ = page.put(key, x, y)
        spans[f] = [page.put_line(_value_tokens(f, rng), x + 20, y)]
        y += 44
    page.put_line(rng.sample(FILLER_WORDS, 2), 60, y + 20)
    return spans


def _build_vertical(page: _Page, rng: random.Random, dropout: float) -> dict[str, list[list[int]]]:
    y = 40
    page.put_line(rng.sample(FILLER_WORDS, rng.randint(1, 2)), 60, y)
    y += 50
    spans: dict[str, list[list[int]]] = {}
    for f in _pick_fields(rng, dropout):
        page.put_line(_FIELD_KEYS[f], 60, y)
        spans[f] = [page.put_line(_value_tokens(f, rng), 60, y + 26)]
        y += 78
    return spans


def _build_table(page: _Page, rng: random.Random, dropout: float, n_items: int) -> dict[str, list[list[int]]]:
    y = 40
    page.put_line(rng.sample(FILLER_WORDS, rng.randint(1, 2)), 60, y)
    y += 46
    spans: dict[str, list[list[int]]] = {}
    header_fields = [f for f in ("vendor", "date") if rng.random() >= dropout]
    for f in header_fields:
        x = 60
        for key in _FIELD_KEYS[f]:
            x, _ = page.put(key, x, y)
        spans[f] = [page.put_line(_value_tokens(f, rng), x + 20, y)]
        y += 40
    page.put_line(["item", "qty", "price"], 60, y)
    y += 34
    spans["item_name"] = []
    spans["item_qty"] = []
    spans["item_price"] = []
    for _ in range(n_items):
        spans["item_name"].append(page.put_line(_product_name(rng), 60, y))
        spans["item_qty"].append([page.put(str(rng.randint(1, 12)), 560, y)[1]])
        spans["item_price"].append([page.put(rng.choice(PRICE_WORDS), 760, y)[1]])
        y += 34
    x, _ = page.put("total", 60, y + 10)
    spans["total"] = [[page.put(rng.choice(PRICE_WORDS), x + 20, y + 10)[1]]]
    return spans


def synthesize(config: SynthConfig, seed: int) -> list[Document]:
    """Generate `config.count` documents, deterministic in (config, seed)."""
    rng = random.Random(seed)
    names = sorted(config.layout_mix)
    weights = [config.layout_mix[n] for n in names]
    schema_ids = set(config.schema.type_ids)
    docs = []
    for i in range(config.count):
        layout = rng.choices(names, weights=weights)[0]
        n_items = rng.randint(2, 5)
        while True:
            page = _Page(config.page, config.jitter, rng)
            if layout == "horizontal":
                spans = _build_horizontal(page, rng, config.field_dropout)
            elif layout == "vertical":
                spans = _build_vertical(page, rng, config.field_dropout)
            else:
                spans = _build_table(page, rng, config.field_dropout, n_items)
            if len(page.words) <= 512:
                break
            n_items = max(2, n_items - 1)  # shrink and regenerate, never emit invalid docs
        entities = tuple(
            EntityAnnotation(f, tuple(tuple(s) for s in spans[f]))
            for f in config.schema.type_ids
            if f in spans and spans[f]
        )
        unknown = set(spans) - schema_ids
        if unknown:
            raise ValidationError(f"generator produced types outside the schema: {sorted(unknown)}")
        docs.append(
            Document.from_raw(
                doc_id=f"synth-{seed:04d}-{i:05d}-{layout}",
                page=config.page,
                words=page.words,
                entities=entities,
            )
        )
    return docs
