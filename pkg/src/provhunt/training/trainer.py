"""Joint pre-training loop."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from provhunt.errors import InvalidInputError, NonFiniteLossError, NumericError
from provhunt.graph import ActionKind, node_attribute_text
from provhunt.neural.checkpoint import save_checkpoint
from provhunt.neural.model import GraphTextModel, GraphBatch, ModelConfig, to_padded
from provhunt.neural.tokenizer import Tokenizer
from provhunt.synthesis import PairedSample
from provhunt.training.config import TrainConfig
from provhunt.training.objectives import (
    HardNegatives,
    gtc_loss,
    gtm_loss,
    mask_nodes,
    mask_tokens,
    mgm_loss,
    mine_hard_negatives,
    mlm_loss,
    similarity_logits,
    total_loss,
)
from provhunt.training.schedule import lr_at

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "gtc", "gtm", "mlm", "mgm", "total", "lr")
CHECKPOINT_NAME = "checkpoint.ckpt"
LOSS_LOG_NAME = "loss_log.csv"


@dataclass
class StepChoices:
    """Random draws of one step, kept so a closure can replay them exactly."""

    negatives: HardNegatives | None
    masked_ids: torch.Tensor | None
    positions: torch.Tensor | None
    masked_nodes: list
    mgm_inputs: tuple | None = None


@dataclass
class LossParts:
    gtc: torch.Tensor
    gtm: torch.Tensor | None
    mlm: torch.Tensor | None
    mgm: torch.Tensor
    total: torch.Tensor
    choices: StepChoices

    def values(self) -> dict:
        return {k: (None if v is None else float(v.detach())) for k, v in
                (("gtc", self.gtc), ("gtm", self.gtm), ("mlm", self.mlm), ("mgm", self.mgm), ("total", self.total))}


@dataclass
class TrainResult:
    model: GraphTextModel
    log: list = field(default_factory=list)

    def log_csv(self) -> str:
        buf = io.StringIO()
        write_loss_log(buf, self.log)
        return buf.getvalue()


def build_tokenizer(samples: Sequence[PairedSample], max_len: int = 256) -> Tokenizer:
    """Vocabulary over reports, node attribute texts and action names."""
    texts = [s.report for s in samples]
    for s in samples:
        texts.extend(node_attribute_text(e) for e in s.graph.entities.values())
    texts.extend(a.value for a in ActionKind)
    return Tokenizer.build(texts, max_len=max_len)


def compute_losses(model: GraphTextModel, samples: Sequence[PairedSample], config: TrainConfig,
                   rng: np.random.Generator, choices: StepChoices | None = None) -> LossParts:
    """Forward pass of all four objectives on one batch.

    Pass ``choices`` from an earlier call to reuse its masks and negatives.
    """
    if not samples:
        raise InvalidInputError("empty batch")
    ids, t_pad = model.tokenizer.batch([s.report for s in samples])
    gbatch = GraphBatch.from_subgraphs([s.graph for s in samples])
    h0, edge_feat = model.node_features(gbatch)

    h_g, z_g, _ = model.encode_graph(gbatch, h0, edge_feat)
    h_t, z_t = model.encode_ids(ids, t_pad)
    if config.normalize:
        z_g, z_t = F.normalize(z_g, dim=-1), F.normalize(z_t, dim=-1)
    logits = similarity_logits(z_g, z_t, model.tau)
    gtc = gtc_loss(z_g, z_t, model.tau)

    if choices is None:
        with torch.no_grad():
            negatives = mine_hard_negatives(torch.softmax(logits, -1), torch.softmax(logits.T, -1), rng)
        masked_ids, positions = mask_tokens(ids, config.mask_ratio, rng)
        if not positions.any():
            masked_ids = positions = None
        choices = StepChoices(negatives, masked_ids, positions, [])
        node_choice = None
    else:
        node_choice = choices.masked_nodes

    h_g_pad, g_pad = to_padded(h_g, gbatch.counts)
    gtm = None
    if choices.negatives is not None:
        gtm = gtm_loss(model, h_t, t_pad, h_g_pad, g_pad, choices.negatives)
    mlm = None
    if choices.positions is not None:
        mlm = mlm_loss(model, choices.masked_ids, choices.positions, ids, t_pad, h_g_pad, g_pad)

    # MGM trains the graph side only: node/edge features and report token states enter
    # as fixed data. With gradient into them, reconstruction is cheapest after every
    # text-encoder output has collapsed onto one point.
    if choices.mgm_inputs is None:
        choices.mgm_inputs = (h0.detach().clone(), edge_feat.detach().clone(), h_t.detach().clone())
    f0, fe, t_ctx = choices.mgm_inputs
    f0_masked, rows, local = mask_nodes(f0, model.node_mask, gbatch.counts, rng, node_choice)
    choices.masked_nodes = local
    h_gm, _, _ = model.encode_graph(gbatch, f0_masked, fe)
    h_gm_pad, _ = to_padded(h_gm, gbatch.counts)
    mgm = mgm_loss(model, h_gm_pad, g_pad, torch.tensor(local), t_ctx, t_pad, f0[rows])

    total = total_loss(gtc, gtm, mlm, mgm, config.alpha)
    return LossParts(gtc, gtm, mlm, mgm, total, choices)


def make_optimizer(model: GraphTextModel, config: TrainConfig) -> torch.optim.AdamW:
    """AdamW; matrices decay, vectors and scalars (biases, norms, tau) do not."""
    decay = [p for p in model.parameters() if p.dim() >= 2]
    plain = [p for p in model.parameters() if p.dim() < 2]
    return torch.optim.AdamW(
        [{"params": decay, "weight_decay": config.weight_decay}, {"params": plain, "weight_decay": 0.0}],
        lr=0.0, betas=config.betas, eps=config.adam_eps,
    )


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def write_loss_log(target, rows) -> None:
    """CSV ``epoch,gtc,gtm,mlm,mgm,total,lr``; skipped terms are empty cells."""
    if isinstance(target, (str, Path)):
        with open(target, "w", newline="", encoding="utf-8") as fh:
            write_loss_log(fh, rows)
        return
    w = csv.writer(target, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for row in rows:
        w.writerow([row["epoch"]] + [_fmt(row[c]) for c in LOG_COLUMNS[1:]])


def read_loss_log(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            {"epoch": int(r["epoch"]), **{c: (float(r[c]) if r[c] else None) for c in LOG_COLUMNS[1:]}}
            for r in csv.DictReader(fh)
        ]


def _mean(xs):
    xs = [x for x in xs if x is not None]
    return sum(xs) / len(xs) if xs else None


def train(dataset: Sequence[PairedSample], config: TrainConfig | None = None,
          model_config: ModelConfig | None = None, *, out_dir=None, model: GraphTextModel | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train from scratch (or continue ``model``) on paired samples.

    Deterministic for a given seed. With ``out_dir`` the loss log and a
    checkpoint are rewritten after every epoch.
    """
    config = config or TrainConfig()
    dataset = list(dataset)
    if not dataset:
        raise InvalidInputError("training set is empty")
    torch.manual_seed(config.seed)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    if model is None:
        model_config = replace(model_config or ModelConfig(), tau_init=config.tau_init)
        model = GraphTextModel(build_tokenizer(dataset, model_config.max_len), model_config)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    optimizer = make_optimizer(model, config)
    steps_per_epoch = math.ceil(len(dataset) / config.batch_size)
    step = 0
    log = []
    model.train()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(dataset))
        sums = {k: [] for k in ("gtc", "gtm", "mlm", "mgm", "total")}
        lr = 0.0
        for start in range(0, len(dataset), config.batch_size):
            batch = [dataset[i] for i in order[start:start + config.batch_size]]
            try:
                parts = compute_losses(model, batch, config, rng)
                values, reason = parts.values(), None
            except NumericError as exc:
                values, reason = {}, str(exc)
            if reason is not None or not all(v is None or math.isfinite(v) for v in values.values()):
                dump = {"epoch": epoch, "step": step, "graph_ids": [s.pair_id for s in batch],
                        "losses": values, "error": reason, "reports": [s.report for s in batch]}
                if out_dir is not None:
                    (out_dir / "nonfinite_dump.json").write_text(json.dumps(dump, indent=2), encoding="utf-8")
                raise NonFiniteLossError(f"non-finite loss at epoch {epoch}, step {step}", dump)
            lr = lr_at(step + 1, config, steps_per_epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad(set_to_none=True)
            parts.total.backward()
            optimizer.step()
            with torch.no_grad():
                model.log_tau.clamp_(math.log(model.cfg.tau_min), math.log(model.cfg.tau_max))
            step += 1
            for k, v in values.items():
                sums[k].append(v)
        row = {"epoch": epoch, **{k: _mean(v) for k, v in sums.items()}, "lr": lr}
        log.append(row)
        if out_dir is not None:
            write_loss_log(out_dir / LOSS_LOG_NAME, log)
            save_checkpoint(out_dir / CHECKPOINT_NAME, model,
                            meta={"epoch": epoch, "seed": config.seed, "train_config": config.to_dict()})
        if on_epoch is not None:
            on_epoch(row)
        logger.debug("epoch %d: %s", epoch, row)
    model.eval()
    return TrainResult(model, log)
