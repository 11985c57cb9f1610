"""Spatial pre-training instructions: fill-between and directional/radial nearest-word search."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass

import numpy as np

from .documents import Document

TASK_MTF = "mtf"
TASK_SOD = "sod"
TASK_SAD = "sad"
TASK_EXTRACT = "extract"
PRETRAIN_TASKS = (TASK_MTF, TASK_SOD, TASK_SAD)

DIRECTIONS = ("left", "right", "up", "down")

MTF_GAP_CAP = 10  # max anchor gap keeps fill targets inside the decoder budget
K_MAX = 5


@dataclass(frozen=True)
class Instruction:
    """One prompt with its gold target token indices (ordered)."""

    task: str
    anchors: tuple[int, ...] = ()
    direction: str | None = None
    k: int | None = None
    entity_type: str | None = None
    targets: tuple[int, ...] = ()

    def to_record(self) -> dict:
        return {
            "task": self.task,
            "anchors": list(self.anchors),
            "direction": self.direction,
            "k": self.k,
            "entity_type": self.entity_type,
            "targets": list(self.targets),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Instruction":
        return cls(
            task=rec["task"],
            anchors=tuple(rec.get("anchors", ())),
            direction=rec.get("direction"),
            k=rec.get("k"),
            entity_type=rec.get("entity_type"),
            targets=tuple(rec.get("targets", ())),
        )


def save_instructions(instructions, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ins in instructions:
            fh.write(json.dumps(ins.to_record(), separators=(",", ":")) + "\n")


def load_instructions(path) -> list[Instruction]:
    with open(path, "r", encoding="utf-8") as fh:
        return [Instruction.from_record(json.loads(line)) for line in fh if line.strip()]


def mtf_targets(doc: Document, i: int, j: int) -> list[int]:
    """Indices strictly between two anchors in feed order."""
    n = len(doc)
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"anchors ({i}, {j}) out of range for {n} tokens")
    if i >= j:
        raise ValueError(f"anchors must satisfy i < j, got ({i}, {j})")
    return list(range(i + 1, j))


def _direction_mask(dx: np.ndarray, dy: np.ndarray, direction: str) -> np.ndarray:
    # axis-dominance cones; horizontal wins exact |dx| == |dy| ties,
    # y grows downward (screen coordinates)
    adx = np.abs(dx)
    ady = np.abs(dy)
    if direction == "right":
        return (dx > 0) & (adx >= ady)
    if direction == "left":
        return (dx < 0) & (adx >= ady)
    if direction == "down":
        return (dy > 0) & (ady > adx)
    if direction == "up":
        return (dy < 0) & (ady > adx)
    raise ValueError(f"unknown direction {direction!r}; expected one of {DIRECTIONS}")


def _ranked_candidates(doc: Document, anchor: int, direction: str | None) -> np.ndarray:
    centers = doc.doubled_centers()
    n = len(doc)
    if not 0 <= anchor < n:
        raise ValueError(f"anchor {anchor} out of range for {n} tokens")
    dx = centers[:, 0] - centers[anchor, 0]
    dy = centers[:, 1] - centers[anchor, 1]
    if direction is None:
        mask = np.ones(n, dtype=bool)
        mask[anchor] = False
    else:
        # the anchor itself has (0, 0) displacement and fails every predicate
        mask = _direction_mask(dx, dy, direction)
    cand = np.nonzero(mask)[0]
    d2 = dx[cand] ** 2 + dy[cand] ** 2
    return cand[np.lexsort((cand, d2))]


def sod_targets(doc: Document, anchor: int, direction: str, k: int) -> list[int]:
    """K nearest tokens in one direction cone, by center distance then index."""
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown direction {direction!r}; expected one of {DIRECTIONS}")
    return _ranked_candidates(doc, anchor, direction)[:k].tolist()


def sad_targets(doc: Document, anchor: int, k: int) -> list[int]:
    """K nearest tokens in any direction, by center distance then index."""
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    return _ranked_candidates(doc, anchor, None)[:k].tolist()


def _mtf_pairs(n: int, gap_cap: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i + 2, min(i + gap_cap, n - 1) + 1)]


def sample_instructions(
    doc: Document,
    per_task: int,
    rng: random.Random,
    tasks: tuple[str, ...] = PRETRAIN_TASKS,
    k_max: int = K_MAX,
    mtf_gap: int = MTF_GAP_CAP,
) -> list[Instruction]:
    """`per_task` instructions per enabled task, targets from the exact ops above."""
    if per_task < 1:
        raise ValueError(f"per_task must be >= 1, got {per_task}")
    n = len(doc)
    out: list[Instruction] = []
    for task in tasks:
        if task == TASK_MTF:
            pairs = _mtf_pairs(n, mtf_gap)
            if not pairs:
                continue  # too small for a fillable pair; never fail
            for _ in range(per_task):
                i, j = pairs[rng.randrange(len(pairs))]
                out.append(
                    Instruction(task=TASK_MTF, anchors=(i, j), targets=tuple(mtf_targets(doc, i, j)))
                )
        elif task == TASK_SOD:
            for _ in range(per_task):
                anchor = rng.randrange(n)
                direction = DIRECTIONS[rng.randrange(len(DIRECTIONS))]
                k = rng.randint(1, k_max)
                out.append(
                    Instruction(
                        task=TASK_SOD,
                        anchors=(anchor,),
                        direction=direction,
                        k=k,
                        targets=tuple(sod_targets(doc, anchor, direction, k)),
                    )
                )
        elif task == TASK_SAD:
            for _ in range(per_task):
                anchor = rng.randrange(n)
                k = rng.randint(1, k_max)
                out.append(
                    Instruction(
                        task=TASK_SAD,
                        anchors=(anchor,),
                        k=k,
                        targets=tuple(sad_targets(doc, anchor, k)),
                    )
                )
        else:
            raise ValueError(f"unknown pre-training task {task!r}")
    return out
