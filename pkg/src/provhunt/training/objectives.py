"""Pre-training objectives: GTC, GTM, MLM, MGM, masking and hard-negative mining."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np
import torch
import torch.nn.functional as F

from provhunt.errors import InvalidInputError, NumericError
from provhunt.neural.tokenizer import CLS_ID, MASK_ID, PAD_ID

logger = logging.getLogger(__name__)

UNMASKABLE = (CLS_ID, PAD_ID)


def _check_finite(*tensors):
    for t in tensors:
        if not torch.isfinite(t).all():
            raise NumericError("non-finite embedding passed to the similarity")


def similarity_logits(zg, zt, tau):
    if float(torch.as_tensor(tau).detach()) <= 0:
        raise InvalidInputError("temperature must be positive")
    _check_finite(zg, zt)
    return zg @ zt.T / tau


def similarity_matrix(zg, zt, tau):
    """Row-softmax of ``zg @ zt.T / tau``: row i is the graph-to-text distribution of graph i."""
    return torch.softmax(similarity_logits(zg, zt, tau), dim=-1)


def directional_losses(logits):
    """(g2t, t2g) cross-entropy against the diagonal for a B x B logit matrix."""
    target = torch.arange(logits.shape[0])
    return F.cross_entropy(logits, target), F.cross_entropy(logits.T, target)


def gtc_loss(zg, zt, tau):
    g2t, t2g = directional_losses(similarity_logits(zg, zt, tau))
    return 0.5 * (g2t + t2g)


@dataclass(frozen=True)
class HardNegatives:
    text_for_graph: np.ndarray   # negative text index for each graph
    graph_for_text: np.ndarray   # negative graph index for each text


def _draw_off_diagonal(p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    b = p.shape[0]
    w = np.array(p, dtype=np.float64, copy=True)
    np.fill_diagonal(w, 0.0)
    w[~np.isfinite(w)] = 0.0
    total = w.sum(axis=1)
    dead = total <= 0
    if dead.any():  # underflowed rows fall back to uniform off-diagonal
        w[dead] = 1.0
        w[dead, np.flatnonzero(dead)] = 0.0
        total = w.sum(axis=1)
    cdf = np.cumsum(w, axis=1)
    u = (1.0 - rng.random(b)) * total  # in (0, total]
    idx = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(idx, b - 1)


def mine_hard_negatives(p_g2t, p_t2g, rng: np.random.Generator) -> HardNegatives | None:
    """Sample one negative per row in proportion to the off-diagonal probabilities.

    Returns None (and logs a notice) when the batch holds a single pair.
    """
    p_g2t = np.asarray(p_g2t.detach() if torch.is_tensor(p_g2t) else p_g2t, dtype=np.float64)
    p_t2g = np.asarray(p_t2g.detach() if torch.is_tensor(p_t2g) else p_t2g, dtype=np.float64)
    if p_g2t.shape != p_t2g.shape or p_g2t.ndim != 2 or p_g2t.shape[0] != p_g2t.shape[1]:
        raise InvalidInputError("similarity matrices must be square and of equal shape")
    if p_g2t.shape[0] < 2:
        logger.info("batch of one pair: no hard negatives, GTM skipped")
        return None
    return HardNegatives(_draw_off_diagonal(p_g2t, rng), _draw_off_diagonal(p_t2g, rng))


def gtm_pairs(negatives: HardNegatives, b: int):
    """Graph index, text index and label for the B positive and 2B negative pairs."""
    ar = np.arange(b)
    g = np.concatenate([ar, ar, negatives.graph_for_text])
    t = np.concatenate([ar, negatives.text_for_graph, ar])
    y = np.concatenate([np.ones(b, dtype=np.int64), np.zeros(2 * b, dtype=np.int64)])
    return torch.from_numpy(g), torch.from_numpy(t), torch.from_numpy(y)


def gtm_loss(model, h_t, t_pad, h_g, g_pad, negatives: HardNegatives):
    """Binary matching cross-entropy over positives and mined negatives.

    ``h_t``/``t_pad`` are token states (B, L, d); ``h_g``/``g_pad`` padded
    node states (B, N, d). Text tokens query graph nodes; the joint
    embedding is read at the [CLS] slot.
    """
    g, t, y = gtm_pairs(negatives, h_t.shape[0])
    joint = model.fuse(h_t[t], t_pad[t], h_g[g], g_pad[g])
    return F.cross_entropy(model.gtm_logits(joint[:, 0]), y)


def mask_count(n_maskable: int, ratio: float) -> int:
    """max(1, round(ratio * n)), halves rounded up."""
    scaled = Decimal(repr(ratio)) * n_maskable
    return max(1, int(scaled.quantize(Decimal(1), rounding=ROUND_HALF_UP)))


def mask_tokens(ids, ratio: float, rng: np.random.Generator):
    """Replace a random subset of non-special positions with [MASK].

    ``ids`` is (L,) or (B, L). Returns ``(masked ids, positions)`` where
    ``positions`` is a bool tensor of the same shape. Rows without any
    maskable token are left alone and reported in the log.
    """
    ids = torch.as_tensor(ids, dtype=torch.long)
    squeeze = ids.dim() == 1
    rows = ids.unsqueeze(0) if squeeze else ids
    masked = rows.clone()
    positions = torch.zeros_like(rows, dtype=torch.bool)
    for r in range(rows.shape[0]):
        row = rows[r]
        maskable = torch.ones_like(row, dtype=torch.bool)
        for special in UNMASKABLE:
            maskable &= row.ne(special)
        cand = torch.nonzero(maskable).flatten().numpy()
        if cand.size == 0:
            logger.info("row %d has no maskable token; skipped", r)
            continue
        chosen = rng.choice(cand, size=mask_count(cand.size, ratio), replace=False)
        chosen = torch.from_numpy(np.sort(chosen))
        positions[r, chosen] = True
        masked[r, chosen] = MASK_ID
    if squeeze:
        return masked[0], positions[0]
    return masked, positions


def masked_cross_entropy(logits, targets):
    """Mean cross-entropy over masked slots; ``logits`` (M, V), ``targets`` (M,)."""
    if logits.shape[0] == 0:
        raise InvalidInputError("no masked position to score")
    return F.cross_entropy(logits, targets)


def mlm_loss(model, masked_ids, positions, original_ids, t_pad, h_g, g_pad):
    h_t, _ = model.encode_ids(masked_ids, t_pad)
    joint = model.fuse(h_t, t_pad, h_g, g_pad)
    return masked_cross_entropy(model.mlm_logits(joint[positions]), original_ids[positions])


def mask_node(features, mask_vector, rng: np.random.Generator):
    """Swap one uniformly chosen row of ``features`` (N, d) for ``mask_vector``."""
    n = features.shape[0]
    if n < 1:
        raise InvalidInputError("cannot mask a node of an empty graph")
    idx = int(rng.integers(n))
    out = features.clone()
    out[idx] = mask_vector
    return out, idx


def mask_nodes(features, mask_vector, counts, rng: np.random.Generator, chosen=None):
    """Batch form of :func:`mask_node`; returns global row indices of masked nodes."""
    if chosen is None:
        local = [int(rng.integers(n)) for n in counts]
    else:
        local = list(chosen)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(int)
    rows = torch.as_tensor(offsets + np.asarray(local, dtype=int), dtype=torch.long)
    out = features.clone()
    out[rows] = mask_vector.to(features.dtype).expand(len(rows), -1)
    return out, rows, local


def squared_error(pred, target):
    """(1/B) sum_i ||target_i - pred_i||^2."""
    return ((target - pred) ** 2).sum(dim=-1).mean()


def mgm_loss(model, h_g_masked, g_pad, node_slots, h_t, t_pad, target):
    """Reconstruct the masked node's input feature from graph and text context.

    ``node_slots`` is (B,) position of the masked node in each padded row.
    """
    joint = model.fuse_nodes(h_g_masked, g_pad, h_t, t_pad)
    pred = model.mgm_predict(joint[torch.arange(joint.shape[0]), node_slots])
    return squared_error(pred, target)


def total_loss(gtc, gtm, mlm, mgm, alpha: float):
    """alpha * gtc + (1 - alpha) * (gtm + mlm + mgm); a skipped term (None) counts as 0."""
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError("alpha must lie strictly between 0 and 1")
    rest = sum(x for x in (gtm, mlm, mgm) if x is not None)
    return alpha * gtc + (1.0 - alpha) * rest
