"""Field-level F1, the shuffled-OCR robustness harness, few-shot and ablation runners."""

from __future__ import annotations

import copy
import hashlib
import json
import random
from collections import Counter
from dataclasses import dataclass, field, replace as dc_replace

import torch

from . import matcher, training
from .compose import EntityPrediction, compose_bio, compose_seq, ground
from .documents import Document, EntityAnnotation, build_tag_space
from .errors import ConfigError
from .model import MatcherModel, build_model


def _as_item(obj, strict_spans: bool):
    if isinstance(obj, EntityPrediction):
        key = (obj.type_id, obj.value)
        if strict_spans:
            return key + (tuple(obj.token_indices),)
        return key
    tup = tuple(obj)
    if strict_spans:
        if len(tup) < 3:
            raise ValueError("strict span matching needs (type, value, indices) items")
        return (tup[0], tup[1], tuple(tup[2]))
    return (tup[0], tup[1])


def _score(tp: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def field_scores(preds, gold, strict_spans: bool = False) -> dict:
    """Micro-averaged and per-type counts over per-document prediction/gold lists.

    A prediction is a true positive when its (type, value) pair matches a
    not-yet-consumed gold instance of the same document (multiset matching).
    """
    if len(preds) != len(gold):
        raise ValueError(f"{len(preds)} prediction groups vs {len(gold)} gold groups")
    tp = Counter()
    n_pred = Counter()
    n_gold = Counter()
    for doc_preds, doc_gold in zip(preds, gold):
        p_items = Counter(_as_item(x, strict_spans) for x in doc_preds)
        g_items = Counter(_as_item(x, strict_spans) for x in doc_gold)
        for item, count in (p_items & g_items).items():
            tp[item[0]] += count
        for item, count in p_items.items():
            n_pred[item[0]] += count
        for item, count in g_items.items():
            n_gold[item[0]] += count
    types = sorted(set(tp) | set(n_pred) | set(n_gold))
    per_type = {}
    for t in types:
        p, r, f = _score(tp[t], n_pred[t], n_gold[t])
        per_type[t] = {
            "precision": p,
            "recall": r,
            "f1": f,
            "tp": tp[t],
            "pred": n_pred[t],
            "gold": n_gold[t],
        }
    micro = _score(sum(tp.values()), sum(n_pred.values()), sum(n_gold.values()))
    return {
        "precision": micro[0],
        "recall": micro[1],
        "f1": micro[2],
        "tp": sum(tp.values()),
        "pred": sum(n_pred.values()),
        "gold": sum(n_gold.values()),
        "per_type": per_type,
    }


def field_f1(preds, gold, strict_spans: bool = False) -> tuple[float, float, float]:
    s = field_scores(preds, gold, strict_spans)
    return (s["precision"], s["recall"], s["f1"])


def shuffle_words(doc: Document, seed: int) -> Document:
    """Permute token feed order with a seed-deterministic permutation.

    Texts and boxes ride along; entity spans are re-indexed through the
    permutation so gold value strings are unchanged.
    """
    rng = random.Random(seed)
    n = len(doc.tokens)
    perm = list(range(n))  # new position j holds old token perm[j]
    rng.shuffle(perm)
    new_index = {old: j for j, old in enumerate(perm)}
    tokens = tuple(dc_replace(doc.tokens[old], index=j) for j, old in enumerate(perm))
    entities = tuple(
        EntityAnnotation(e.type_id, tuple(tuple(new_index[i] for i in span) for span in e.spans))
        for e in doc.entities
    )
    return Document(doc_id=doc.doc_id, page=doc.page, tokens=tokens, entities=entities)


class ModelPredictor:
    """Runs the matcher heads and composes grounded entity predictions."""

    def __init__(self, model: MatcherModel):
        self.model = model
        self.schema = model.schema
        self.tag_space = build_tag_space(model.schema)

    def predict(self, doc: Document, mode: str) -> list[EntityPrediction]:
        self.model.eval()
        with torch.no_grad():
            if mode == "bio":
                _, _, m = matcher.bio_forward(self.model, doc)
                preds = compose_bio(m, doc, self.tag_space)
            elif mode == "seq":
                preds = []
                for type_id in self.schema.type_ids:
                    prompt = self.model.extract_prompt(type_id)
                    matched = matcher.seq_generate(self.model, doc, prompt)
                    preds.extend(compose_seq(matched, doc, type_id))
            else:
                raise ValueError(f"unknown matcher mode {mode!r}")
        return ground(preds, doc)


class OracleMatcher:
    """Gold-injection predictor: emits exactly the annotated entities through the
    same compose path as the model. Used for harness and invariance checks."""

    def __init__(self, schema):
        self.schema = schema
        self.tag_space = build_tag_space(schema)

    def predict(self, doc: Document, mode: str) -> list[EntityPrediction]:
        if mode == "bio":
            y = matcher.bio_labels(doc, self.tag_space)
            # one-hot labels as similarity scores
            preds = compose_bio(y, doc, self.tag_space)
        elif mode == "seq":
            preds = []
            for type_id in self.schema.type_ids:
                preds.extend(compose_seq(matcher.seq_targets(doc, type_id), doc, type_id))
        else:
            raise ValueError(f"unknown matcher mode {mode!r}")
        return ground(preds, doc)


def doc_shuffle_seed(global_seed: int, doc_id: str) -> int:
    digest = hashlib.sha256(f"{global_seed}:{doc_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class EvalReport:
    mode: str
    condition: str
    doc_count: int
    precision: float
    recall: float
    f1: float
    tp: int
    pred: int
    gold: int
    per_type: dict
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        from dataclasses import asdict

        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def evaluate(
    predictor,
    docs,
    condition: str = "clean",
    mode: str = "seq",
    seed: int = 0,
    provenance: str = "",
    strict_spans: bool = False,
) -> EvalReport:
    """Compose predictions per document and score field-level F1.

    condition="shuffled" re-orders each document's tokens with a per-document
    seed derived from (seed, doc_id) before prediction.
    """
    docs = list(docs)
    if not docs:
        raise ValueError("evaluate needs at least one document")
    if condition not in ("clean", "shuffled"):
        raise ValueError(f"unknown condition {condition!r}")
    preds = []
    gold = []
    for doc in docs:
        eval_doc = (
            shuffle_words(doc, doc_shuffle_seed(seed, doc.doc_id))
            if condition == "shuffled"
            else doc
        )
        preds.append(predictor.predict(eval_doc, mode))
        gold.append([(t, v, idx) for t, v, idx in eval_doc.gold_items()])
    scores = field_scores(preds, gold, strict_spans)
    per_type = dict(scores["per_type"])
    for t in predictor.schema.type_ids:  # report a row for every schema type
        per_type.setdefault(
            t, {"precision": 0.0, "recall": 0.0, "f1": 0.0, "tp": 0, "pred": 0, "gold": 0}
        )
    return EvalReport(
        mode=mode,
        condition=condition,
        doc_count=len(docs),
        precision=scores["precision"],
        recall=scores["recall"],
        f1=scores["f1"],
        tp=scores["tp"],
        pred=scores["pred"],
        gold=scores["gold"],
        per_type=per_type,
        config_hash=provenance,
    )


def run_few_shot(
    pool,
    eval_docs,
    model_config,
    vocab,
    schema,
    train_config,
    shots,
    folds: int = 5,
    seed: int = 0,
    init_state: dict | None = None,
) -> dict:
    """Per shot count: `folds` episodes (sampling with replacement), fine-tune,
    evaluate, and report mean +/- std of field F1."""
    results: dict[str, dict] = {}
    for n in shots:
        fold_f1 = []
        episodes = training.sample_episodes(pool, n, folds, seed + n)
        for ep in episodes:
            model = build_model(model_config, vocab, schema, seed=seed + ep.fold)
            if init_state is not None:
                model.load_state_dict(copy.deepcopy(init_state))
            cfg = dc_replace(train_config, seed=seed + ep.fold)
            training.finetune(model, training.episode_docs(ep, pool), cfg)
            report = evaluate(ModelPredictor(model), eval_docs, mode=cfg.matcher)
            fold_f1.append(report.f1)
        mean = sum(fold_f1) / len(fold_f1)
        var = sum((x - mean) ** 2 for x in fold_f1) / max(1, len(fold_f1) - 1)
        results[str(n)] = {"mean": mean, "std": var**0.5, "per_fold": fold_f1}
    return results


def pretrain_task_arms(tasks=("mtf", "sod", "sad"), resampler: str = "par") -> list[dict]:
    """Baseline plus every non-empty task subset: 8 arms for three tasks."""
    from itertools import combinations

    arms = [{"pretrain": False, "resampler": resampler, "tasks": ()}]
    for r in range(1, len(tasks) + 1):
        for combo in combinations(tasks, r):
            arms.append({"pretrain": True, "resampler": resampler, "tasks": combo})
    return arms


def run_ablation(grid: dict, base: dict) -> list[dict]:
    """Train and evaluate each arm with shared seeds; a failed arm is marked
    in its row and the sweep continues.

    `grid` either lists explicit arm dicts under "arms" or gives per-axis
    options ("pretrain", "resampler", "tasks") whose cartesian product is run.
    """
    arms = grid.get("arms")
    if arms is None:
        pretrain_opts = grid.get("pretrain", [False])
        resampler_opts = grid.get("resampler", [base["model_config"].resampler])
        task_opts = grid.get("tasks", [tuple(base.get("tasks", ()))])
        arms = [
            {"pretrain": bool(pt), "resampler": r, "tasks": tuple(t)}
            for pt in pretrain_opts
            for r in resampler_opts
            for t in task_opts
        ]
    seed = base.get("seed", 0)
    rows = []
    for arm in arms:
        row = {
            "pretrain": bool(arm["pretrain"]),
            "resampler": arm["resampler"],
            "tasks": ",".join(arm["tasks"]) if arm["tasks"] else "-",
            "seed": seed,
        }
        try:
            row["f1"] = _ablation_arm(
                base, bool(arm["pretrain"]), arm["resampler"], tuple(arm["tasks"]), seed
            )
            row["status"] = "ok"
        except Exception as exc:  # arm failure must not kill the sweep
            row["f1"] = None
            row["status"] = f"failed: {exc}"
        rows.append(row)
    return rows


def _ablation_arm(base, pt: bool, arm: str, tasks: tuple, seed: int) -> float:
    model_config = dc_replace(base["model_config"], resampler=arm)
    model = build_model(model_config, base["vocab"], base["schema"], seed=seed)
    if pt:
        if not tasks:
            raise ConfigError("pre-training arm needs at least one task")
        pre_cfg = dc_replace(base["pretrain_config"], tasks=tasks, seed=seed)
        training.pretrain(model, base["pretrain_docs"], pre_cfg)
    fit_cfg = dc_replace(base["finetune_config"], seed=seed)
    training.finetune(model, base["train_docs"], fit_cfg)
    report = evaluate(ModelPredictor(model), base["eval_docs"], mode=fit_cfg.matcher)
    return report.f1
