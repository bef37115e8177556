"""Building blocks: attention, transformer blocks, GIN layers, attention pooling."""

from __future__ import annotations

import math

import torch
from torch import nn
import torch.nn.functional as F

from provhunt.errors import InvalidInputError


def fan_in_uniform_(module: nn.Module) -> None:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases for every Linear."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            bound = 1.0 / math.sqrt(m.in_features)
            nn.init.uniform_(m.weight, -bound, bound)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class MultiHeadAttention(nn.Module):
    def __init__(self, d: int, heads: int):
        super().__init__()
        if d % heads:
            raise ValueError(f"d={d} is not divisible by heads={heads}")
        self.d, self.heads = d, heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.o = nn.Linear(d, d)

    def forward(self, x, ctx=None, key_pad=None):
        """``x``: (B, Lq, d); ``ctx``: (B, Lk, d) or None for self-attention;
        ``key_pad``: (B, Lk) bool, True where keys are padding."""
        ctx = x if ctx is None else ctx
        if x.shape[-1] != self.d or ctx.shape[-1] != self.d:
            raise InvalidInputError(f"attention expects last dim {self.d}")
        b, lq, _ = x.shape
        lk = ctx.shape[1]
        hd = self.d // self.heads
        q = self.q(x).view(b, lq, self.heads, hd).transpose(1, 2)
        k = self.k(ctx).view(b, lk, self.heads, hd).transpose(1, 2)
        v = self.v(ctx).view(b, lk, self.heads, hd).transpose(1, 2)
        mask = None if key_pad is None else ~key_pad[:, None, None, :]
        out = F.scaled_dot_product_attention(q, k, v, attn_mask=mask)
        out = out.transpose(1, 2).reshape(b, lq, self.d)
        return self.o(out)


class FeedForward(nn.Module):
    def __init__(self, d: int, hidden: int, dropout: float = 0.0):
        super().__init__()
        self.fc1 = nn.Linear(d, hidden)
        self.fc2 = nn.Linear(hidden, d)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        return self.drop(self.fc2(F.gelu(self.fc1(x))))


class TransformerBlock(nn.Module):
    """Pre-norm block: self-attention, optional cross-attention, feed-forward.

    Dropout sits on each residual branch; attention weights are not dropped.
    """

    def __init__(self, d: int, heads: int, dropout: float = 0.0, cross: bool = False):
        super().__init__()
        self.ln_self = nn.LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, heads)
        self.cross = cross
        if cross:
            self.ln_cross = nn.LayerNorm(d)
            self.cross_attn = MultiHeadAttention(d, heads)
        self.ln_ff = nn.LayerNorm(d)
        self.ff = FeedForward(d, 4 * d, dropout)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, pad=None, ctx=None, ctx_pad=None):
        x = x + self.drop(self.self_attn(self.ln_self(x), key_pad=pad))
        if self.cross:
            if ctx is None:
                raise InvalidInputError("cross-attention block needs a context")
            x = x + self.drop(self.cross_attn(self.ln_cross(x), ctx, key_pad=ctx_pad))
        return x + self.ff(self.ln_ff(x))


class GinLayer(nn.Module):
    """One GIN layer with edge-aware messages ``g([h_u; e_uv]) = W[h_u; e_uv] + b``."""

    def __init__(self, d: int, d_edge: int | None = None):
        super().__init__()
        d_edge = d if d_edge is None else d_edge
        self.d, self.d_edge = d, d_edge
        self.eps = nn.Parameter(torch.zeros(()))
        self.message = nn.Linear(d + d_edge, d)
        self.mlp = nn.Sequential(nn.Linear(d, d), nn.GELU(), nn.Linear(d, d))

    def forward(self, h, edge_feat, edge_index):
        return gin_layer(self, h, edge_feat, edge_index)


def gin_layer(layer, h, edge_feat, edge_index):
    """h'_v = MLP((1 + eps) h_v + sum_{u in N(v)} g(h_u, e_uv)).

    ``edge_index`` is (2, E) with rows (source u, target v); ``edge_feat``
    is (E, d_edge). ``layer`` needs ``eps``, ``message`` and ``mlp``.
    """
    if h.dim() != 2 or edge_feat.dim() != 2 or edge_index.shape[0] != 2:
        raise InvalidInputError("gin_layer expects h (N, d), edge_feat (E, d_e), edge_index (2, E)")
    if edge_feat.shape[0] != edge_index.shape[1]:
        raise InvalidInputError("edge_feat and edge_index disagree on edge count")
    src, dst = edge_index
    if src.numel():
        msg = layer.message(torch.cat([h[src], edge_feat], dim=-1))
        if msg.shape[-1] != h.shape[-1]:
            raise InvalidInputError("message dimension differs from node dimension")
        agg = torch.zeros_like(h).index_add(0, dst, msg)
    else:
        agg = torch.zeros_like(h)
    return layer.mlp((1 + layer.eps) * h + agg)


def segment_softmax(scores, segment, n_segments):
    """Softmax of ``scores`` within groups given by ``segment`` ids."""
    seg_max = torch.full((n_segments,), float("-inf"), dtype=scores.dtype, device=scores.device)
    seg_max = seg_max.scatter_reduce(0, segment, scores, reduce="amax", include_self=True)
    ex = torch.exp(scores - seg_max[segment].detach())
    denom = torch.zeros(n_segments, dtype=scores.dtype, device=scores.device).index_add(0, segment, ex)
    return ex / denom[segment]


class AttentionPooling(nn.Module):
    """z = sum_n alpha_n h_n, alpha = softmax_n(q . tanh(W h_n)) per graph."""

    def __init__(self, d: int):
        super().__init__()
        self.proj = nn.Linear(d, d)
        self.query = nn.Parameter(torch.empty(d))
        bound = 1.0 / math.sqrt(d)
        nn.init.uniform_(self.query, -bound, bound)

    def forward(self, h, segment, n_segments):
        scores = torch.tanh(self.proj(h)) @ self.query
        alpha = segment_softmax(scores, segment, n_segments)
        z = torch.zeros(n_segments, h.shape[-1], dtype=h.dtype, device=h.device)
        z = z.index_add(0, segment, alpha[:, None] * h)
        return z, alpha
