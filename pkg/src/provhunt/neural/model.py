"""Graph encoder, text encoder, multimodal encoder and task heads."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from provhunt.errors import ConfigurationError, InvalidInputError
from provhunt.graph import ActionKind, Subgraph, node_attribute_text
from provhunt.neural.layers import (
    AttentionPooling,
    GinLayer,
    TransformerBlock,
    fan_in_uniform_,
)
from provhunt.neural.tokenizer import PAD_ID, Tokenizer

ACTIONS = tuple(ActionKind)


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64
    heads: int = 4
    text_layers: int = 2
    gin_layers: int = 3
    fusion_layers: int = 2
    max_len: int = 256
    dropout: float = 0.1
    tau_init: float = 0.07
    tau_min: float = 0.01
    tau_max: float = 1.0

    def __post_init__(self):
        if self.d < 1 or self.heads < 1 or self.d % self.heads:
            raise ConfigurationError("d must be a positive multiple of heads")
        for name in ("text_layers", "gin_layers", "fusion_layers", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must be in [0, 1)")
        if not 0 < self.tau_min <= self.tau_init <= self.tau_max:
            raise ConfigurationError("need 0 < tau_min <= tau_init <= tau_max")

    def to_dict(self):
        return asdict(self)


@dataclass
class GraphBatch:
    """Flattened node/edge tensors for a list of subgraphs.

    Node order inside each graph follows ``Subgraph.nodes``; each distinct
    (subject, action, object) triple yields one message in each direction.
    """

    texts: list
    node_text: torch.Tensor     # (N,) index into texts
    graph_index: torch.Tensor   # (N,) owning graph
    edge_index: torch.Tensor    # (2, E)
    edge_action: torch.Tensor   # (E,) index into ACTIONS
    counts: list
    node_ids: list = field(default_factory=list)

    @property
    def n_graphs(self):
        return len(self.counts)

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.counts)[:-1]]).astype(int).tolist()

    @classmethod
    def from_subgraphs(cls, subgraphs) -> "GraphBatch":
        texts, text_pos = [], {}
        node_text, graph_index, src, dst, act, counts, node_ids = [], [], [], [], [], [], []
        action_pos = {a: i for i, a in enumerate(ACTIONS)}
        offset = 0
        for gi, sg in enumerate(subgraphs):
            if not len(sg.nodes):
                raise InvalidInputError("cannot encode an empty graph")
            local = {nid: offset + i for i, nid in enumerate(sg.nodes)}
            for nid in sg.nodes:
                t = node_attribute_text(sg.entities[nid])
                if t not in text_pos:
                    text_pos[t] = len(texts)
                    texts.append(t)
                node_text.append(text_pos[t])
                graph_index.append(gi)
            seen = set()
            for ev in sg.events:
                key = (ev.subject, ev.action, ev.object)
                if ev.subject == ev.object or key in seen:
                    continue
                seen.add(key)
                u, v = local[ev.subject], local[ev.object]
                src += [u, v]
                dst += [v, u]
                act += [action_pos[ev.action]] * 2
            counts.append(len(sg.nodes))
            node_ids.append(list(sg.nodes))
            offset += len(sg.nodes)
        return cls(
            texts=texts,
            node_text=torch.tensor(node_text, dtype=torch.long),
            graph_index=torch.tensor(graph_index, dtype=torch.long),
            edge_index=torch.tensor([src, dst], dtype=torch.long).reshape(2, -1),
            edge_action=torch.tensor(act, dtype=torch.long),
            counts=counts,
            node_ids=node_ids,
        )


def to_padded(flat, counts):
    """(N, d) node states -> (B, max_n, d) plus (B, max_n) padding mask."""
    width = max(counts)
    pad = torch.ones(len(counts), width, dtype=torch.bool)
    rows, start = [], 0
    for b, n in enumerate(counts):
        row = flat[start:start + n]
        if n < width:
            row = torch.cat([row, flat.new_zeros(width - n, flat.shape[-1])])
        rows.append(row)
        pad[b, :n] = False
        start += n
    return torch.stack(rows), pad


class TextEncoder(nn.Module):
    def __init__(self, vocab_size: int, cfg: ModelConfig):
        super().__init__()
        self.vocab_size = vocab_size
        self.tok = nn.Embedding(vocab_size, cfg.d)
        self.pos = nn.Parameter(torch.empty(cfg.max_len, cfg.d))
        self.blocks = nn.ModuleList(TransformerBlock(cfg.d, cfg.heads, cfg.dropout) for _ in range(cfg.text_layers))
        self.ln = nn.LayerNorm(cfg.d)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, ids, pad=None):
        """Returns per-token states H_T (B, L, d) and the [CLS] state z_T (B, d)."""
        if ids.numel() and (int(ids.max()) >= self.vocab_size or int(ids.min()) < 0):
            raise InvalidInputError(f"token id out of range [0, {self.vocab_size})")
        if ids.shape[1] > self.pos.shape[0]:
            raise InvalidInputError("sequence longer than max_len")
        if pad is None:
            pad = ids.eq(PAD_ID)
        x = self.drop(self.tok(ids) + self.pos[: ids.shape[1]])
        for block in self.blocks:
            x = block(x, pad)
        h = self.ln(x)
        return h, h[:, 0]


class GraphEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.layers = nn.ModuleList(GinLayer(cfg.d) for _ in range(cfg.gin_layers))
        self.norms = nn.ModuleList(nn.LayerNorm(cfg.d) for _ in range(cfg.gin_layers))
        self.pool = AttentionPooling(cfg.d)

    def forward(self, h, edge_feat, edge_index, graph_index, n_graphs):
        """Returns node states H_G (N, d), pooled z_G (B, d), pooling weights (N,)."""
        for layer, norm in zip(self.layers, self.norms):
            h = norm(layer(h, edge_feat, edge_index))
        z, alpha = self.pool(h, graph_index, n_graphs)
        return h, z, alpha


class MultimodalEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.d = cfg.d
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.d, cfg.heads, cfg.dropout, cross=True) for _ in range(cfg.fusion_layers)
        )
        self.ln = nn.LayerNorm(cfg.d)

    def forward(self, x, pad, ctx, ctx_pad):
        """Self-attention over ``x`` then cross-attention into ``ctx``, per block."""
        if x.shape[-1] != self.d or ctx.shape[-1] != self.d:
            raise InvalidInputError(f"multimodal encoder expects dimension {self.d}")
        if x.shape[1] == 0 or ctx.shape[1] == 0:
            raise InvalidInputError("multimodal encoder needs non-empty inputs")
        for block in self.blocks:
            x = block(x, pad, ctx, ctx_pad)
        return self.ln(x)


class GraphTextModel(nn.Module):
    """Graph-text model with GTC/GTM/MLM/MGM heads.

    ``tau`` is stored as ``log_tau`` and clamped to ``[tau_min, tau_max]``.
    """

    def __init__(self, tokenizer: Tokenizer, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig(max_len=tokenizer.max_len)
        if tokenizer.max_len > cfg.max_len:
            raise ConfigurationError("tokenizer max_len exceeds model max_len")
        self.cfg = cfg
        self.tokenizer = tokenizer
        self.text_encoder = TextEncoder(len(tokenizer), cfg)
        self.graph_encoder = GraphEncoder(cfg)
        self.fusion = MultimodalEncoder(cfg)
        self.graph_fusion = MultimodalEncoder(cfg)
        self.gtm_head = nn.Linear(cfg.d, 2)
        self.mlm_head = nn.Linear(cfg.d, len(tokenizer))
        self.mgm_head = nn.Linear(cfg.d, cfg.d)
        self.node_mask = nn.Parameter(torch.empty(cfg.d))
        self.log_tau = nn.Parameter(torch.tensor(math.log(cfg.tau_init)))
        self.reset_parameters()

    def reset_parameters(self):
        fan_in_uniform_(self)
        bound = 1.0 / math.sqrt(self.cfg.d)
        nn.init.uniform_(self.text_encoder.tok.weight, -1.0, 1.0)
        nn.init.uniform_(self.text_encoder.pos, -0.1, 0.1)
        nn.init.uniform_(self.node_mask, -1.0, 1.0)
        nn.init.uniform_(self.graph_encoder.pool.query, -bound, bound)
        for layer in self.graph_encoder.layers:
            nn.init.zeros_(layer.eps)
        with torch.no_grad():
            self.log_tau.fill_(math.log(self.cfg.tau_init))

    @property
    def dtype(self):
        return self.node_mask.dtype

    @property
    def tau(self):
        return self.log_tau.exp().clamp(self.cfg.tau_min, self.cfg.tau_max)

    # -- text ----------------------------------------------------------

    def encode_ids(self, ids, pad=None):
        return self.text_encoder(ids, pad)

    def encode_texts(self, texts):
        ids, pad = self.tokenizer.batch(texts)
        h, z = self.text_encoder(ids, pad)
        return h, z, pad

    # -- graph ---------------------------------------------------------

    def node_features(self, batch: GraphBatch):
        """Initial node features and edge features, both from the text encoder."""
        _, z_text, _ = self.encode_texts(batch.texts)
        _, z_act, _ = self.encode_texts([a.value for a in ACTIONS])
        return z_text[batch.node_text], z_act[batch.edge_action]

    def encode_graph(self, batch: GraphBatch, h0=None, edge_feat=None):
        if h0 is None or edge_feat is None:
            f0, fe = self.node_features(batch)
            h0 = f0 if h0 is None else h0
            edge_feat = fe if edge_feat is None else edge_feat
        return self.graph_encoder(h0, edge_feat, batch.edge_index, batch.graph_index, batch.n_graphs)

    def encode_subgraphs(self, subgraphs):
        return self.encode_graph(GraphBatch.from_subgraphs(subgraphs))

    # -- fusion and heads ----------------------------------------------

    def fuse(self, x, pad, ctx, ctx_pad):
        """Token queries over node keys/values; used by GTM and MLM."""
        return self.fusion(x, pad, ctx, ctx_pad)

    def fuse_nodes(self, nodes, pad, tokens, token_pad):
        """Node queries over token keys/values; used by MGM."""
        return self.graph_fusion(nodes, pad, tokens, token_pad)

    def gtm_logits(self, z_m):
        return self.gtm_head(z_m)

    def mlm_logits(self, states):
        return self.mlm_head(states)

    def mgm_predict(self, states):
        return self.mgm_head(states)

    # -- inference helpers ---------------------------------------------

    @torch.no_grad()
    def embed_texts(self, texts, batch_size: int = 64) -> np.ndarray:
        was = self.training
        self.eval()
        out = []
        for i in range(0, len(texts), batch_size):
            out.append(self.encode_texts(list(texts[i:i + batch_size]))[1].double().numpy())
        self.train(was)
        return np.concatenate(out) if out else np.zeros((0, self.cfg.d))

    @torch.no_grad()
    def embed_graphs(self, subgraphs, batch_size: int = 64) -> np.ndarray:
        was = self.training
        self.eval()
        out = []
        subgraphs = list(subgraphs)
        for i in range(0, len(subgraphs), batch_size):
            out.append(self.encode_subgraphs(subgraphs[i:i + batch_size])[1].double().numpy())
        self.train(was)
        return np.concatenate(out) if out else np.zeros((0, self.cfg.d))

    @torch.no_grad()
    def match_probabilities(self, subgraph: Subgraph, texts) -> np.ndarray:
        """GTM match probability of ``subgraph`` against each text."""
        was = self.training
        self.eval()
        batch = GraphBatch.from_subgraphs([subgraph])
        h_g, _, _ = self.encode_graph(batch)
        h_t, _, pad = self.encode_texts(list(texts))
        k = h_t.shape[0]
        ctx = h_g.unsqueeze(0).expand(k, -1, -1)
        ctx_pad = torch.zeros(k, h_g.shape[0], dtype=torch.bool)
        z_m = self.fuse(h_t, pad, ctx, ctx_pad)[:, 0]
        probs = torch.softmax(self.gtm_logits(z_m), dim=-1)[:, 1]
        self.train(was)
        return probs.double().numpy()

