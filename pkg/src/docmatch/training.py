"""Pre-training on spatial instructions, fine-tuning on extraction prompts,
few-shot episode sampling, optimization, and checkpointing."""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import asdict, dataclass
from pathlib import Path

import torch

from . import matcher
from .documents import Document, EntitySchema, build_tag_space
from .errors import CheckpointError, ConfigError, TrainingError
from .model import MatcherModel, ModelConfig, Vocabulary, build_model
from .spatial import PRETRAIN_TASKS, sample_instructions

CHECKPOINT_VERSION = 1


def seed_all(seed: int, deterministic: bool = True) -> None:
    """Seed torch; deterministic mode also pins the thread count so reductions
    have a fixed order."""
    torch.manual_seed(seed)
    if deterministic:
        torch.set_num_threads(1)


@dataclass
class TrainConfig:
    phase: str = "finetune"  # pretrain | finetune
    matcher: str = "seq"  # bio | seq
    lr: float = 2e-5
    weight_decay: float = 0.1
    batch: int | None = None  # defaults: 32 for pretrain, 4 for finetune
    max_steps: int | None = None  # few-shot protocol default is 5000
    epochs: int | None = None  # pretrain protocol default is 10
    warmup_frac: float = 0.05
    seed: int = 0
    per_task: int = 8
    tasks: tuple[str, ...] = PRETRAIN_TASKS
    freeze_encoder: bool = False
    deterministic: bool = True
    word_dropout: float = 0.1  # blank words to UNK in train mode; layout must carry

    def __post_init__(self) -> None:
        if self.phase not in ("pretrain", "finetune"):
            raise ConfigError(f"unknown phase {self.phase!r}")
        if self.matcher not in ("bio", "seq"):
            raise ConfigError(f"unknown matcher mode {self.matcher!r}")
        if self.lr <= 0 or (self.batch is not None and self.batch <= 0):
            raise ConfigError("lr and batch must be positive")
        if self.max_steps is not None and self.max_steps <= 0:
            raise ConfigError("max_steps must be positive")
        if self.epochs is not None and self.epochs <= 0:
            raise ConfigError("epochs must be positive")
        if self.per_task < 1:
            raise ConfigError("per_task must be >= 1")

    @property
    def batch_size(self) -> int:
        if self.batch is not None:
            return self.batch
        return 32 if self.phase == "pretrain" else 4

    def total_steps(self, n_docs: int) -> int:
        if self.max_steps is not None:
            return self.max_steps
        if self.epochs is not None:
            return self.epochs * max(1, math.ceil(n_docs / self.batch_size))
        if self.phase == "pretrain":
            # protocol default: 10 epochs
            return 10 * max(1, math.ceil(n_docs / self.batch_size))
        return 5000  # few-shot protocol default step budget


@dataclass
class TrainResult:
    model: MatcherModel
    log: list[dict]
    steps: int
    final_loss: float


def _linear_schedule(optimizer, total_steps: int, warmup_frac: float):
    warmup = max(1, int(round(warmup_frac * total_steps)))

    def factor(step: int) -> float:
        if step < warmup:
            return (step + 1) / warmup
        if total_steps <= warmup:
            return 1.0
        return max(0.0, (total_steps - step) / (total_steps - warmup))

    return torch.optim.lr_scheduler.LambdaLR(optimizer, factor)


def _batches(items, size: int, rng: random.Random, steps: int):
    """Yield `steps` shuffled batches, reshuffling at each epoch boundary."""
    emitted = 0
    while emitted < steps:
        order = list(items)
        rng.shuffle(order)
        for start in range(0, len(order), size):
            if emitted >= steps:
                return
            yield order[start : start + size]
            emitted += 1


def _check_finite(loss, step: int, doc_ids, extra: dict) -> None:
    if torch.isfinite(loss):
        return
    dump = {"step": step, "loss": float(loss.detach()), "docs": list(doc_ids), **extra}
    raise TrainingError(f"non-finite loss at step {step}; batch dump: {json.dumps(dump)}")


def _instruction_loss(model: MatcherModel, doc: Document, instructions) -> torch.Tensor:
    """Mean sequential matching loss over a document's instructions, encoder shared."""
    raw, x_m = model.encode_source(doc)
    pool = matcher.pool_matrix(model, x_m)
    losses = []
    for instr in instructions:
        memory = model.generator_memory(model.embed_prompt(instr, raw), x_m)
        gold = list(instr.targets) + [matcher.EOS]
        gold = gold[: model.config.max_dec_len]
        logits = matcher.seq_logits(model, memory, pool, gold)
        losses.append(matcher.seq_loss_from_logits(logits, gold))
    return torch.stack(losses).mean()


def pretrain(model: MatcherModel, corpus, config: TrainConfig) -> TrainResult:
    """Optimize the sequential matching loss on sampled spatial instructions."""
    if not config.tasks:
        raise ConfigError("no pre-training tasks enabled")
    docs = [d for d in corpus if d.admitted]
    if not docs:
        raise ConfigError("no admitted documents in the pre-training corpus")
    seed_all(config.seed, config.deterministic)
    rng = random.Random(config.seed)
    frozen = []
    if config.freeze_encoder:
        frozen = list(model.source.parameters()) + list(model.encoder.parameters())
        for p in frozen:
            p.requires_grad_(False)
    try:
        return _run(
            model,
            docs,
            config,
            lambda doc: _pretrain_doc_loss(model, doc, config, rng),
            mix_key="task_mix",
        )
    finally:
        for p in frozen:
            p.requires_grad_(True)


def _pretrain_doc_loss(model, doc, config, rng):
    instructions = sample_instructions(doc, config.per_task, rng, tasks=config.tasks)
    mix: dict[str, int] = {}
    for ins in instructions:
        mix[ins.task] = mix.get(ins.task, 0) + 1
    if not instructions:
        return None, mix
    return _instruction_loss(model, doc, instructions), mix


def finetune(model: MatcherModel, train_docs, config: TrainConfig) -> TrainResult:
    """BIO mode optimizes the summed binary CE on the similarity matrix; SEQ mode
    optimizes the pointer loss over one extract prompt per schema type per doc."""
    docs = [d for d in train_docs if d.admitted]
    if not docs:
        raise ConfigError("fine-tuning train set is empty")
    seed_all(config.seed, config.deterministic)
    tag_space = build_tag_space(model.schema)

    def doc_loss(doc):
        mix: dict[str, int] = {}
        if config.matcher == "bio":
            _, _, m = matcher.bio_forward(model, doc)
            y = matcher.bio_labels(doc, tag_space).to(m.dtype)
            for t in model.schema.type_ids:
                mix[t] = mix.get(t, 0) + 1
            return matcher.bio_loss(m, y), mix
        raw, x_m = model.encode_source(doc)
        pool = matcher.pool_matrix(model, x_m)
        losses = []
        for type_id in model.schema.type_ids:
            prompt = model.extract_prompt(type_id)
            memory = model.generator_memory(model.embed_prompt(prompt, raw), x_m)
            gold = matcher.seq_targets(doc, type_id)[: model.config.max_dec_len]
            logits = matcher.seq_logits(model, memory, pool, gold)
            losses.append(matcher.seq_loss_from_logits(logits, gold))
            mix[type_id] = mix.get(type_id, 0) + 1
        return torch.stack(losses).mean(), mix

    return _run(model, docs, config, doc_loss, mix_key="type_mix")


def _run(model, docs, config, doc_loss_fn, mix_key: str) -> TrainResult:
    total = config.total_steps(len(docs))
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(params, lr=config.lr, weight_decay=config.weight_decay)
    scheduler = _linear_schedule(optimizer, total, config.warmup_frac)
    order_rng = random.Random(config.seed + 1)
    log: list[dict] = []
    last = float("nan")
    model.train()
    model.word_dropout = config.word_dropout
    for step, batch in enumerate(_batches(docs, config.batch_size, order_rng, total)):
        losses = []
        mix: dict[str, int] = {}
        for doc in batch:
            loss, doc_mix = doc_loss_fn(doc)
            for k, v in doc_mix.items():
                mix[k] = mix.get(k, 0) + v
            if loss is not None:
                losses.append(loss)
        if not losses:
            scheduler.step()
            continue
        batch_loss = torch.stack(losses).mean()
        _check_finite(batch_loss, step, [d.doc_id for d in batch], {mix_key: mix})
        optimizer.zero_grad()
        batch_loss.backward()
        optimizer.step()
        scheduler.step()
        last = float(batch_loss.detach())
        log.append({"step": step, "loss": last, "lr": scheduler.get_last_lr()[0], mix_key: mix})
    model.eval()
    model.word_dropout = 0.0
    return TrainResult(model=model, log=log, steps=total, final_loss=last)


@dataclass(frozen=True)
class FewShotEpisode:
    shots: int
    fold: int
    doc_ids: tuple[str, ...]


def sample_episodes(pool, n: int, folds: int, seed: int) -> list[FewShotEpisode]:
    """`folds` episodes of `n` documents sampled with replacement."""
    if n <= 0:
        raise ValueError(f"shots must be positive, got {n}")
    if not pool:
        raise ValueError("episode pool is empty")
    rng = random.Random(seed)
    episodes = []
    for fold in range(folds):
        picked = [pool[rng.randrange(len(pool))].doc_id for _ in range(n)]
        episodes.append(FewShotEpisode(shots=n, fold=fold, doc_ids=tuple(picked)))
    return episodes


def episode_docs(episode: FewShotEpisode, pool) -> list[Document]:
    by_id = {d.doc_id: d for d in pool}
    return [by_id[i] for i in episode.doc_ids]


def config_hash(config) -> str:
    payload = asdict(config) if not isinstance(config, dict) else config
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def corpus_hash(docs) -> str:
    from .documents import _doc_to_record

    h = hashlib.sha256()
    for doc in docs:
        h.update(json.dumps(_doc_to_record(doc), separators=(",", ":")).encode())
        h.update(b"\n")
    return h.hexdigest()[:16]


def save_checkpoint(model: MatcherModel, meta: dict, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), path / "params.pt")
    record = {
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "vocab": list(model.vocab.words[1:]),  # UNK is implicit
        "schema": model.schema.to_records(),
        "meta": meta,
    }
    (path / "meta.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path, expect_tag_count: int | None = None) -> tuple[MatcherModel, dict]:
    path = Path(path)
    meta_file = path / "meta.json"
    if not meta_file.exists():
        raise CheckpointError(f"no checkpoint at {path}")
    record = json.loads(meta_file.read_text())
    if record.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {record.get('version')} != supported {CHECKPOINT_VERSION}"
        )
    config = ModelConfig.from_dict(record["model_config"])
    if expect_tag_count is not None and config.n_tags != expect_tag_count:
        raise CheckpointError(
            f"tensor tag_queries has {config.n_tags} rows but the requested tag space "
            f"needs {expect_tag_count}"
        )
    vocab = Vocabulary(record["vocab"])
    schema = EntitySchema.from_records(record["schema"])
    model = build_model(config, vocab, schema, seed=0)
    state = torch.load(path / "params.pt", weights_only=True)
    own = model.state_dict()
    for name, tensor in state.items():
        if name not in own:
            raise CheckpointError(f"unexpected tensor {name} in checkpoint")
        if tuple(own[name].shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"tensor {name} has shape {tuple(tensor.shape)}, expected {tuple(own[name].shape)}"
            )
    missing = set(own) - set(state)
    if missing:
        raise CheckpointError(f"checkpoint missing tensors: {sorted(missing)}")
    model.load_state_dict(state)
    model.eval()
    return model, record["meta"]
