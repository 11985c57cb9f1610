"""Matching heads: tag-space similarity scoring over generated vectors, and
sequential pointer decoding with SEP/EOS over an augmented token pool."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .documents import Document, TagSpace
from .errors import LabelError
from .model import MatcherModel
from .spatial import Instruction

# sentinels used in target/output index lists; mapped to pool rows N and N+1
SEP = -1
EOS = -2


def bio_labels(doc: Document, tag_space: TagSpace) -> torch.Tensor:
    """One-hot (N, n_tags) gold tags: first token of an instance B, rest I, else O."""
    n = len(doc)
    tags = [0] * n
    for ent in doc.entities:
        b = tag_space.begin_index(ent.type_id)
        i = tag_space.inside_index(ent.type_id)
        for span in ent.spans:
            for pos, idx in enumerate(span):
                if tags[idx] != 0:
                    raise LabelError(
                        f"doc {doc.doc_id}: token {idx} labeled twice (overlapping spans)"
                    )
                tags[idx] = b if pos == 0 else i
    y = torch.zeros((n, tag_space.size), dtype=torch.get_default_dtype())
    y[torch.arange(n), torch.tensor(tags)] = 1.0
    return y


def bio_matcher_vectors(model: MatcherModel, memory) -> torch.Tensor:
    """V_r (d, n_tags): one generated column per tag, conditioned on the memory."""
    out = model.decoder(model.tag_queries, memory, causal=False)
    return model.bio_proj(out).transpose(0, 1)


def bio_similarity(x_m, v_r) -> torch.Tensor:
    """Exact matrix product M = X_m . V_r, no scaling or bias."""
    if x_m.shape[1] != v_r.shape[0]:
        raise ValueError(f"inner dimensions disagree: {tuple(x_m.shape)} vs {tuple(v_r.shape)}")
    return x_m @ v_r


def bio_loss(m, y) -> torch.Tensor:
    """Summed per-entry binary cross entropy on the similarity logits."""
    if m.shape != y.shape:
        raise ValueError(f"similarity {tuple(m.shape)} and labels {tuple(y.shape)} disagree")
    ones = y.sum(dim=1)
    if not torch.all(ones == 1.0):
        bad = int(torch.nonzero(ones != 1.0)[0])
        raise LabelError(f"label row {bad} is not one-hot")
    return F.binary_cross_entropy_with_logits(m, y.to(m.dtype), reduction="sum")


def bio_forward(model: MatcherModel, doc: Document):
    """Full tag-space pass: (X_m, V_r, M) with every type prompt in the memory."""
    raw, x_m = model.encode_source(doc)
    memory = model.generator_memory(model.all_type_prompts(raw), x_m)
    v_r = bio_matcher_vectors(model, memory)
    return x_m, v_r, bio_similarity(x_m, v_r)


def seq_targets(doc: Document, entity_type: str) -> list[int]:
    """Instance token indices (instances ordered by first token), SEP between
    repeated instances, EOS terminated. No instances -> [EOS]."""
    instances = sorted(doc.instances_of(entity_type), key=lambda s: s[0])
    out: list[int] = []
    for i, span in enumerate(instances):
        if i > 0:
            out.append(SEP)
        out.extend(span)
    out.append(EOS)
    return out


def pool_matrix(model: MatcherModel, x_m) -> torch.Tensor:
    """Matching pool: source rows plus the learned SEP and EOS rows (N+2, d)."""
    return torch.cat([x_m, model.sep_vec.unsqueeze(0), model.eos_vec.unsqueeze(0)], dim=0)


def pool_index(entry: int, n_words: int) -> int:
    if entry == SEP:
        return n_words
    if entry == EOS:
        return n_words + 1
    if 0 <= entry < n_words:
        return entry
    raise LabelError(f"target entry {entry} outside pool of {n_words} tokens")


def entry_from_pool(idx: int, n_words: int) -> int:
    if idx == n_words:
        return SEP
    if idx == n_words + 1:
        return EOS
    return idx


def seq_step_inputs(model: MatcherModel, pool, gold: list[int]):
    """Teacher-forced decoder inputs: BOS then the pool row of each previous gold."""
    n_words = pool.shape[0] - 2
    t = len(gold)
    if t > model.config.max_dec_len:
        raise ValueError(f"target length {t} exceeds decoder cap {model.config.max_dec_len}")
    rows = [model.bos_query]
    rows += [pool[pool_index(g, n_words)] for g in gold[:-1]]
    x = torch.stack(rows)
    return x + model.dec_pos_emb(torch.arange(t, device=x.device))


def seq_logits(model: MatcherModel, memory, pool, gold: list[int]) -> torch.Tensor:
    """(T, N+2) matching logits for each teacher-forced step."""
    queries = seq_step_inputs(model, pool, gold)
    out = model.decoder(queries, memory, causal=True)
    v_seq = model.seq_proj(out)
    return v_seq @ pool.transpose(0, 1)


def seq_loss_from_logits(logits, gold: list[int]) -> torch.Tensor:
    """Summed softmax cross entropy of each step's gold pool entry."""
    n_words = logits.shape[1] - 2
    idx = torch.tensor([pool_index(g, n_words) for g in gold], device=logits.device)
    return F.cross_entropy(logits, idx, reduction="sum")


def seq_loss(model: MatcherModel, doc: Document, prompt: Instruction, gold: list[int]) -> torch.Tensor:
    raw, x_m = model.encode_source(doc)
    memory = model.generator_memory(model.embed_prompt(prompt, raw), x_m)
    pool = pool_matrix(model, x_m)
    return seq_loss_from_logits(seq_logits(model, memory, pool, gold), gold)


def seq_generate(
    model: MatcherModel,
    doc: Document,
    prompt: Instruction,
    max_len: int | None = None,
    logits_hook=None,
) -> list[int]:
    """Greedy decode until EOS or the length cap; returns sentinel-coded entries.

    `logits_hook(step, prefix) -> logits or None` can override a step's logits;
    used to inject oracle scores in tests and diagnostics.
    """
    cap = model.config.max_dec_len if max_len is None else max_len
    if cap > model.config.max_dec_len:
        raise ValueError(f"max_len {cap} exceeds decoder cap {model.config.max_dec_len}")
    with torch.no_grad():
        raw, x_m = model.encode_source(doc)
        memory = model.generator_memory(model.embed_prompt(prompt, raw), x_m)
        pool = pool_matrix(model, x_m)
        n_words = x_m.shape[0]
        out: list[int] = []
        for step in range(cap):
            logits = None
            if logits_hook is not None:
                logits = logits_hook(step, list(out))
            if logits is None:
                # feed the prefix plus a dummy last entry: only the final step row
                # is read, and its input embeds the previously matched entry
                logits = seq_logits(model, memory, pool, out + [EOS])[-1]
            entry = entry_from_pool(int(torch.argmax(logits)), n_words)
            out.append(entry)
            if entry == EOS:
                break
        return out
