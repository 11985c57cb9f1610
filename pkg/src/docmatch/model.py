"""Small trainable text+layout transformer: embeddings, encoder/decoder stacks,
structured prompts, and finite-difference gradient checking."""

from __future__ import annotations

import math
import random
from dataclasses import asdict, dataclass

import torch
from torch import nn

from .documents import Document, EntitySchema, GRID
from .errors import ConfigError
from .spatial import DIRECTIONS, Instruction, TASK_EXTRACT, TASK_MTF, TASK_SAD, TASK_SOD

TASK_IDS = {TASK_MTF: 0, TASK_SOD: 1, TASK_SAD: 2, TASK_EXTRACT: 3}
DIRECTION_IDS = {d: i for i, d in enumerate(DIRECTIONS)}
PROMPT_SLOTS = 4

RESAMPLER_ARMS = ("par", "vanilla", "none")


@dataclass
class ModelConfig:
    vocab_size: int
    n_entity_types: int
    d: int = 128
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    n_queries: int = 16
    resampler: str = "par"
    resampler_layers: int = 2
    ffn_mult: int = 4
    max_enc_len: int = 512
    max_dec_len: int = 128
    coord_buckets: int = GRID + 1
    k_buckets: int = 16

    def __post_init__(self) -> None:
        if self.d % self.heads != 0:
            raise ConfigError(f"d={self.d} not divisible by heads={self.heads}")
        if self.resampler not in RESAMPLER_ARMS:
            raise ConfigError(f"resampler must be one of {RESAMPLER_ARMS}, got {self.resampler!r}")
        if self.n_tags > self.max_dec_len:
            raise ConfigError(
                f"tag space size {self.n_tags} exceeds decoder length cap {self.max_dec_len}"
            )
        if self.vocab_size < 1 or self.n_entity_types < 0:
            raise ConfigError("vocab_size must be >= 1 and n_entity_types >= 0")

    @property
    def n_tags(self) -> int:
        return 2 * self.n_entity_types + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class Vocabulary:
    """Closed word list with an UNK fallback at id 0."""

    UNK = "<unk>"

    def __init__(self, words) -> None:
        self.words = (self.UNK,) + tuple(w for w in words if w != self.UNK)
        self._ids = {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    def encode(self, text: str) -> int:
        return self._ids.get(text, 0)


class MultiHeadAttention(nn.Module):
    def __init__(self, d: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = d // heads
        self.q_proj = nn.Linear(d, d)
        self.k_proj = nn.Linear(d, d)
        self.v_proj = nn.Linear(d, d)
        self.out_proj = nn.Linear(d, d)

    def forward(self, queries, keys, causal: bool = False, return_probs: bool = False):
        # queries (Q, d); keys (M, d) double as values
        nq, d = queries.shape
        nk = keys.shape[0]
        q = self.q_proj(queries).view(nq, self.heads, self.head_dim).transpose(0, 1)
        k = self.k_proj(keys).view(nk, self.heads, self.head_dim).transpose(0, 1)
        v = self.v_proj(keys).view(nk, self.heads, self.head_dim).transpose(0, 1)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if causal:
            if nq != nk:
                raise ValueError("causal masking requires self-attention (Q == M)")
            mask = torch.triu(torch.ones(nq, nk, dtype=torch.bool, device=scores.device), 1)
            scores = scores.masked_fill(mask, float("-inf"))
        probs = torch.softmax(scores, dim=-1)
        out = (probs @ v).transpose(0, 1).reshape(nq, d)
        out = self.out_proj(out)
        if return_probs:
            return out, probs
        return out


class FeedForward(nn.Module):
    def __init__(self, d: int, mult: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(d, mult * d), nn.GELU(), nn.Linear(mult * d, d))

    def forward(self, x):
        return self.net(x)


class EncoderBlock(nn.Module):
    def __init__(self, d: int, heads: int, mult: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads)
        self.norm2 = nn.LayerNorm(d)
        self.ff = FeedForward(d, mult)

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h)
        x = x + self.ff(self.norm2(x))
        return x


class Encoder(nn.Module):
    """Pre-norm self-attention stack; shape preserving."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.blocks = nn.ModuleList(
            EncoderBlock(config.d, config.heads, config.ffn_mult) for _ in range(config.enc_layers)
        )
        self.norm = nn.LayerNorm(config.d)

    def forward(self, x):
        if not torch.isfinite(x).all():
            raise ValueError("encoder input contains non-finite values")
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)


class DecoderBlock(nn.Module):
    def __init__(self, d: int, heads: int, mult: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, heads)
        self.norm2 = nn.LayerNorm(d)
        self.norm_mem = nn.LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, heads)
        self.norm3 = nn.LayerNorm(d)
        self.ff = FeedForward(d, mult)

    def forward(self, x, memory, causal: bool):
        h = self.norm1(x)
        x = x + self.self_attn(h, h, causal=causal)
        x = x + self.cross_attn(self.norm2(x), self.norm_mem(memory))
        x = x + self.ff(self.norm3(x))
        return x


class Decoder(nn.Module):
    """Queries cross-attend memory; self-attention is causal in SEQ mode."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.blocks = nn.ModuleList(
            DecoderBlock(config.d, config.heads, config.ffn_mult) for _ in range(config.dec_layers)
        )
        self.norm = nn.LayerNorm(config.d)

    def forward(self, queries, memory, causal: bool):
        if memory.shape[0] == 0:
            raise ValueError("decoder memory is empty")
        x = queries
        for blk in self.blocks:
            x = blk(x, memory, causal)
        return self.norm(x)


class SourceEmbedder(nn.Module):
    """Word + 1-D position + six bucketized layout lookups, summed per token."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.d
        self.max_enc_len = config.max_enc_len
        self.word_emb = nn.Embedding(config.vocab_size, d)
        self.pos_emb = nn.Embedding(config.max_enc_len, d)
        self.x0_emb = nn.Embedding(config.coord_buckets, d)
        self.y0_emb = nn.Embedding(config.coord_buckets, d)
        self.x1_emb = nn.Embedding(config.coord_buckets, d)
        self.y1_emb = nn.Embedding(config.coord_buckets, d)
        self.w_emb = nn.Embedding(config.coord_buckets, d)
        self.h_emb = nn.Embedding(config.coord_buckets, d)

    def forward(self, doc: Document, vocab: Vocabulary, word_dropout: float = 0.0):
        n = len(doc)
        if n > self.max_enc_len:
            raise ValueError(f"doc {doc.doc_id}: {n} tokens exceed encoder cap {self.max_enc_len}")
        device = self.word_emb.weight.device
        ids = torch.tensor([vocab.encode(t.text) for t in doc.tokens], device=device)
        if self.training and word_dropout > 0:
            # blank random words to UNK so matching cannot shortcut on lexical
            # identity and must lean on layout; train mode only
            drop = torch.rand(n, device=device) < word_dropout
            ids = ids.masked_fill(drop, 0)
        boxes = torch.tensor([t.box for t in doc.tokens], device=device)
        pos = torch.arange(n, device=device)
        x0, y0, x1, y1 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
        return (
            self.word_emb(ids)
            + self.pos_emb(pos)
            + self.x0_emb(x0)
            + self.y0_emb(y0)
            + self.x1_emb(x1)
            + self.y1_emb(y1)
            + self.w_emb(x1 - x0)
            + self.h_emb(y1 - y0)
        )


class PromptEmbedder(nn.Module):
    """Structured 4-slot prompt: task, parameter, k-or-anchor, anchor.

    Anchor slots carry the referenced token's pre-encoder source row, binding
    the instruction to a concrete token.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.d
        self.k_buckets = config.k_buckets
        self.task_emb = nn.Embedding(len(TASK_IDS), d)
        self.type_emb = nn.Embedding(max(1, config.n_entity_types), d)
        self.dir_emb = nn.Embedding(len(DIRECTIONS), d)
        self.k_emb = nn.Embedding(config.k_buckets, d)
        self.slot_emb = nn.Embedding(PROMPT_SLOTS, d)
        self.pad_vec = nn.Parameter(torch.randn(d) * 0.02)

    def _anchor_row(self, source_raw, anchor: int):
        if not 0 <= anchor < source_raw.shape[0]:
            raise ValueError(f"prompt anchor {anchor} out of range for {source_raw.shape[0]} tokens")
        return source_raw[anchor]

    def forward(self, instr: Instruction, source_raw, type_index: int | None):
        idx = lambda i: torch.tensor(i, device=self.pad_vec.device)
        rows = [self.task_emb(idx(TASK_IDS[instr.task]))]
        if instr.task == TASK_EXTRACT:
            if type_index is None:
                raise ValueError("extract prompt needs an entity type index")
            rows += [self.type_emb(idx(type_index)), self.pad_vec, self.pad_vec]
        elif instr.task == TASK_SOD:
            k = min(max(instr.k or 1, 1), self.k_buckets - 1)
            rows += [
                self.dir_emb(idx(DIRECTION_IDS[instr.direction])),
                self.k_emb(idx(k)),
                self._anchor_row(source_raw, instr.anchors[0]),
            ]
        elif instr.task == TASK_SAD:
            k = min(max(instr.k or 1, 1), self.k_buckets - 1)
            rows += [self.pad_vec, self.k_emb(idx(k)), self._anchor_row(source_raw, instr.anchors[0])]
        elif instr.task == TASK_MTF:
            rows += [
                self.pad_vec,
                self._anchor_row(source_raw, instr.anchors[0]),
                self._anchor_row(source_raw, instr.anchors[1]),
            ]
        else:
            raise ValueError(f"unknown prompt task {instr.task!r}")
        x_p = torch.stack(rows)
        return x_p + self.slot_emb(torch.arange(PROMPT_SLOTS, device=x_p.device))


class MatcherModel(nn.Module):
    """Shared trunk (source embedding, encoder, resampler, decoder) plus the
    tag-space and sequential matching heads; mode is chosen per forward path."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, schema: EntitySchema):
        super().__init__()
        from .resampler import PromptAwareResampler  # local import avoids a cycle

        if len(vocab) != config.vocab_size:
            raise ConfigError(f"vocab has {len(vocab)} words, config says {config.vocab_size}")
        if len(schema) != config.n_entity_types:
            raise ConfigError(
                f"schema has {len(schema)} types, config says {config.n_entity_types}"
            )
        self.config = config
        self.vocab = vocab
        self.schema = schema
        self.source = SourceEmbedder(config)
        self.encoder = Encoder(config)
        self.prompter = PromptEmbedder(config)
        self.resampler = PromptAwareResampler(config) if config.resampler != "none" else None
        self.decoder = Decoder(config)
        d = config.d
        # tag-space head
        self.tag_queries = nn.Parameter(torch.randn(config.n_tags, d) * 0.02)
        self.bio_proj = nn.Linear(d, d)
        # sequential head
        self.bos_query = nn.Parameter(torch.randn(d) * 0.02)
        self.sep_vec = nn.Parameter(torch.randn(d) * 0.02)
        self.eos_vec = nn.Parameter(torch.randn(d) * 0.02)
        self.dec_pos_emb = nn.Embedding(config.max_dec_len, d)
        self.seq_proj = nn.Linear(d, d)
        self.word_dropout = 0.0  # set by the training harness, train mode only

    def embed_source(self, doc: Document):
        """Pre-encoder per-token embedding rows (N, d)."""
        return self.source(doc, self.vocab, word_dropout=self.word_dropout)

    def encode_source(self, doc: Document):
        """(raw embedding rows, encoded source embeddings X_m)."""
        raw = self.embed_source(doc)
        return raw, self.encoder(raw)

    def embed_prompt(self, instr: Instruction, source_raw):
        type_index = (
            self.schema.type_index(instr.entity_type) if instr.entity_type is not None else None
        )
        return self.prompter(instr, source_raw, type_index)

    def extract_prompt(self, type_id: str) -> Instruction:
        return Instruction(task=TASK_EXTRACT, entity_type=type_id)

    def all_type_prompts(self, source_raw):
        """Concatenated extract prompts for every schema type (4*T, d)."""
        rows = [self.embed_prompt(self.extract_prompt(t), source_raw) for t in self.schema.type_ids]
        if not rows:
            return source_raw.new_zeros((0, self.config.d))
        return torch.cat(rows, dim=0)

    def generator_memory(self, x_p, x_m):
        """Decoder memory per resampler arm: resampled queries and prompts for
        par/vanilla, raw encoder output plus prompts when bypassed."""
        arm = self.config.resampler
        if arm == "par":
            x_q2, x_p2 = self.resampler(self.resampler.queries, x_p, x_m)
            return torch.cat([x_q2, x_p2], dim=0)
        if arm == "vanilla":
            x_q2 = self.resampler.vanilla_forward(self.resampler.queries, x_m)
            return torch.cat([x_q2, x_p], dim=0)
        return torch.cat([x_m, x_p], dim=0)


def build_model(
    config: ModelConfig, vocab: Vocabulary, schema: EntitySchema, seed: int = 0
) -> MatcherModel:
    """Seeded construction: same seed, same parameters."""
    torch.manual_seed(seed)
    return MatcherModel(config, vocab, schema)


def grad_check(loss_fn, named_params, eps: float = 1e-5, samples: int = 30, seed: int = 0) -> float:
    """Max relative error between analytic gradients and central differences.

    `loss_fn` must be a deterministic scalar function of the parameters.
    Relative error uses max(1, |analytic|, |numeric|) as the denominator so
    near-zero coordinates are judged absolutely. Run in float64.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError(f"eps {eps} outside [1e-6, 1e-4]")
    params = [(name, p) for name, p in named_params if p.requires_grad]
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise ValueError("loss is non-finite at the evaluation point")
    grads = torch.autograd.grad(loss, [p for _, p in params], allow_unused=True)
    coords = [(i, j) for i, (_, p) in enumerate(params) for j in range(p.numel())]
    rng = random.Random(seed)
    picked = rng.sample(coords, min(samples, len(coords)))
    worst = 0.0
    with torch.no_grad():
        for pi, flat_idx in picked:
            _, p = params[pi]
            g = grads[pi]
            analytic = 0.0 if g is None else float(g.reshape(-1)[flat_idx])
            orig = float(p.reshape(-1)[flat_idx])
            p.reshape(-1)[flat_idx] = orig + eps
            up = float(loss_fn())
            p.reshape(-1)[flat_idx] = orig - eps
            down = float(loss_fn())
            p.reshape(-1)[flat_idx] = orig
            numeric = (up - down) / (2.0 * eps)
            rel = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            worst = max(worst, rel)
    return worst
