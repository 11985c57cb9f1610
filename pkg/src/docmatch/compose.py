"""Assembles matcher outputs into structured entity values with grounding boxes."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

from .documents import Box, Document, TagSpace
from .matcher import EOS, SEP


@dataclass(frozen=True)
class EntityPrediction:
    """One extracted entity instance; value is the space-joined token text."""

    type_id: str
    value: str
    token_indices: tuple[int, ...]
    grounding: tuple[Box, ...] = ()


def _as_array(m) -> np.ndarray:
    if isinstance(m, torch.Tensor):
        return m.detach().cpu().numpy()
    return np.asarray(m)


def compose_bio(m, doc: Document, tag_space: TagSpace) -> list[EntityPrediction]:
    """Argmax each token's tag row, then scan feed order into instances.

    Ties go to the lower tag index (O is index 0, so O wins exact ties).
    An I tag with no matching open instance starts a new one rather than
    dropping the token.
    """
    scores = _as_array(m)
    if scores.shape != (len(doc), tag_space.size):
        raise ValueError(
            f"similarity shape {scores.shape} does not match "
            f"({len(doc)}, {tag_space.size})"
        )
    preds: list[EntityPrediction] = []
    open_type: str | None = None
    open_idx: list[int] = []

    def close() -> None:
        nonlocal open_type, open_idx
        if open_type is not None:
            preds.append(
                EntityPrediction(open_type, doc.text_of(open_idx), tuple(open_idx))
            )
        open_type, open_idx = None, []

    for t in range(len(doc)):
        kind, type_id = tag_space.kind_of(int(np.argmax(scores[t])))
        if kind == "O":
            close()
        elif kind == "B":
            close()
            open_type, open_idx = type_id, [t]
        else:  # I
            if open_type == type_id:
                open_idx.append(t)
            else:
                close()
                open_type, open_idx = type_id, [t]
    close()
    return preds


def compose_seq(matched: list[int], doc: Document, entity_type: str) -> list[EntityPrediction]:
    """Split a generated entry list on SEP into instances, in generation order.

    EOS (and anything after it) is dropped; empty segments between consecutive
    SEPs yield no instance.
    """
    if EOS in matched:
        matched = matched[: matched.index(EOS)]
    preds: list[EntityPrediction] = []
    segment: list[int] = []

    def close() -> None:
        nonlocal segment
        if segment:
            preds.append(
                EntityPrediction(entity_type, doc.text_of(segment), tuple(segment))
            )
        segment = []

    for entry in matched:
        if entry == SEP:
            close()
        else:
            segment.append(entry)
    close()
    return preds


def ground(preds: list[EntityPrediction], doc: Document) -> list[EntityPrediction]:
    """Attach each matched token's normalized box; value strings unchanged."""
    out = []
    for p in preds:
        boxes = tuple(doc.tokens[i].box for i in p.token_indices)
        out.append(replace(p, grounding=boxes))
    return out


def prediction_records(preds: list[EntityPrediction]) -> list[dict]:
    """JSON payload: type, value, indices, and grounding boxes."""
    return [
        {
            "type": p.type_id,
            "value": p.value,
            "token_indices": list(p.token_indices),
            "boxes": [list(b) for b in p.grounding],
        }
        for p in preds
    ]
