"""Prompt-aware resampler: learnable queries and prompt rows jointly cross-attend
the source embeddings concatenated with the combined query itself."""

from __future__ import annotations

import torch
from torch import nn

from .model import FeedForward, ModelConfig, MultiHeadAttention


class ResamplerBlock(nn.Module):
    def __init__(self, d: int, heads: int, mult: int):
        super().__init__()
        self.norm_q = nn.LayerNorm(d)
        self.norm_kv = nn.LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads)
        self.norm_ff = nn.LayerNorm(d)
        self.ff = FeedForward(d, mult)

    def forward(self, combined, x_m):
        # keys/values are the source rows concatenated with the combined query;
        # no positional encoding on memory rows (set semantics over tokens)
        kv = torch.cat([x_m, combined], dim=0)
        combined = combined + self.attn(self.norm_q(combined), self.norm_kv(kv))
        combined = combined + self.ff(self.norm_ff(combined))
        return combined


class PromptAwareResampler(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.n_queries = config.n_queries
        self.d = config.d
        self.queries = nn.Parameter(torch.randn(config.n_queries, config.d) * 0.02)
        self.blocks = nn.ModuleList(
            ResamplerBlock(config.d, config.heads, config.ffn_mult)
            for _ in range(config.resampler_layers)
        )

    def forward(self, x_q, x_p, x_m):
        """(enhanced queries, enhanced prompts); x_p may have zero rows."""
        if x_m.shape[0] == 0:
            raise ValueError("resampler source embeddings are empty")
        n_q = x_q.shape[0]
        if n_q < 1:
            raise ValueError("resampler needs at least one learnable query")
        combined = torch.cat([x_q, x_p], dim=0)
        for blk in self.blocks:
            combined = blk(combined, x_m)
        return combined[:n_q], combined[n_q:]

    def vanilla_forward(self, x_q, x_m):
        """Attentive pooling over the sources without prompt rows in the query."""
        x_q2, _ = self.forward(x_q, x_q.new_zeros((0, x_q.shape[1])), x_m)
        return x_q2


def bypass(x_m):
    """Ablation arm: the generator cross-attends the raw encoder output."""
    return x_m
