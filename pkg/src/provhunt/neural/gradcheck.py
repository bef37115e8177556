"""Central finite-difference oracle for parameter gradients.

Kept independent of autograd: it only perturbs parameter values in place
and re-evaluates a scalar closure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass
class GradCheckResult:
    names: list
    analytic: np.ndarray
    numeric: np.ndarray
    rel_err: np.ndarray
    tol: float

    @property
    def pass_fraction(self) -> float:
        return float(np.mean(self.rel_err <= self.tol)) if len(self.rel_err) else 1.0


def relative_error(a, n, floor: float = 1e-6):
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from dividing by ~0."""
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


@torch.no_grad()
def central_difference(closure, param: torch.Tensor, flat_index: int, step: float = 1e-5) -> float:
    flat = param.view(-1)
    orig = flat[flat_index].item()
    flat[flat_index] = orig + step
    plus = float(closure())
    flat[flat_index] = orig - step
    minus = float(closure())
    flat[flat_index] = orig
    return (plus - minus) / (2 * step)


def sample_parameters(named_params, n: int, rng: np.random.Generator):
    """Draw ``n`` (name, tensor, flat index) triples uniformly over all scalar entries."""
    named = [(k, p) for k, p in named_params if p.requires_grad]
    sizes = np.array([p.numel() for _, p in named])
    picks = rng.choice(int(sizes.sum()), size=min(n, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)
    out = []
    for flat in np.sort(picks):
        which = int(np.searchsorted(bounds, flat, side="right"))
        start = bounds[which - 1] if which else 0
        out.append((named[which][0], named[which][1], int(flat - start)))
    return out


def check_gradients(closure, model: torch.nn.Module, n_params: int = 500, step: float = 1e-5,
                    tol: float = 1e-4, seed: int = 0) -> GradCheckResult:
    """Compare autograd gradients of ``closure()`` with central differences."""
    rng = np.random.default_rng(seed)
    model.zero_grad(set_to_none=True)
    loss = closure()
    loss.backward()
    picks = sample_parameters(model.named_parameters(), n_params, rng)
    names, analytic, numeric = [], [], []
    for name, param, idx in picks:
        grad = param.grad
        analytic.append(0.0 if grad is None else float(grad.view(-1)[idx]))
        numeric.append(central_difference(closure, param, idx, step))
        names.append(f"{name}[{idx}]")
    analytic, numeric = np.array(analytic), np.array(numeric)
    return GradCheckResult(names, analytic, numeric, relative_error(analytic, numeric), tol)
