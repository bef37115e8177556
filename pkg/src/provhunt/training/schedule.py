"""Linear warmup followed by cosine annealing."""

from __future__ import annotations

import math

from provhunt.training.config import TrainConfig


def lr_at(step: float, config: TrainConfig, steps_per_epoch: int = 1) -> float:
    """Learning rate after ``step`` optimizer steps.

    Ramps linearly from 0 to ``config.lr`` over the warmup epochs, then
    follows a half cosine down to ``config.min_lr`` at the last epoch and
    stays there.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    warm = config.warmup_epochs * steps_per_epoch
    total = config.epochs * steps_per_epoch
    if warm and step <= warm:
        return config.lr * step / warm
    span = total - warm
    progress = 1.0 if span <= 0 else min(1.0, (step - warm) / span)
    return config.min_lr + 0.5 * (config.lr - config.min_lr) * (1.0 + math.cos(math.pi * progress))
