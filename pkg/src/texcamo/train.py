"""SGD with momentum and the poly learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .losses import DEFAULT_LAMBDAS, LossReport, seg_loss, tarm_losses, total_loss
from .network import TANet
from .tensor import Tensor, backward, no_grad, zero_grad

__all__ = ["poly_lr", "LossConfig", "TrainState", "NumericalError", "train_step", "compute_loss"]


class NumericalError(FloatingPointError):
    """A loss component became NaN or infinite."""


def poly_lr(iteration: int, total: int, base_lr: float = 1e-3, power: float = 0.9) -> float:
    if total <= 0:
        raise ValueError("poly_lr: total iterations must be positive")
    if not 0 <= iteration <= total:
        raise ValueError(f"poly_lr: iteration {iteration} outside [0, {total}]")
    return base_lr * (1.0 - iteration / total) ** power


@dataclass(frozen=True)
class LossConfig:
    lambdas: tuple[float, float, float] = DEFAULT_LAMBDAS
    affinity_grid: int = 16
    patch_size: int = 4
    use_bcl: bool = True
    reduction: str = "pairs"


@dataclass
class TrainState:
    total_iterations: int
    base_lr: float = 1e-3
    power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 5e-4
    rng_seed: int = 0
    clip_norm: Optional[float] = None
    iteration: int = 0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def lr(self) -> float:
        return poly_lr(self.iteration, self.total_iterations, self.base_lr, self.power)


def compute_loss(model: TANet, images: np.ndarray, masks: np.ndarray, cfg: LossConfig) -> tuple[Tensor, LossReport]:
    logits, maps = model(Tensor(images))
    seg, per_scale = seg_loss(logits, masks)
    if maps and cfg.lambdas[1] + cfg.lambdas[2] > 0:
        aff, edge = tarm_losses(maps, masks, cfg.affinity_grid, cfg.patch_size, cfg.use_bcl, cfg.reduction)
    else:
        aff, edge = Tensor(0.0), Tensor(0.0)
    total = total_loss(seg, aff, edge, cfg.lambdas)
    single = bool(np.any(masks.reshape(len(masks), -1).min(axis=1) == masks.reshape(len(masks), -1).max(axis=1)))
    report = LossReport(seg.item(), aff.item(), edge.item(), total.item(), per_scale, single_class=single)
    return total, report


def train_step(
    model: TANet,
    images: np.ndarray,
    masks: np.ndarray,
    state: TrainState,
    cfg: LossConfig,
) -> LossReport:
    """One forward/backward/update. Raises :class:`NumericalError` before touching weights."""
    if len(images) == 0:
        raise ValueError("train_step: empty batch")
    total, report = compute_loss(model, images, masks, cfg)
    if not report.is_finite():
        bad = [k for k in ("seg", "aff", "edge", "total") if not math.isfinite(getattr(report, k))]
        raise NumericalError(f"non-finite loss at iteration {state.iteration}: {', '.join(bad)}")
    params = model.params
    zero_grad(params.values())
    backward(total)
    lr = state.lr
    names = sorted(params)
    grads = {n: np.zeros_like(params[n].data) if params[n].grad is None else params[n].grad for n in names}
    for name in names:
        if not np.isfinite(grads[name]).all():
            raise NumericalError(f"non-finite gradient for {name} at iteration {state.iteration}")
    norm = math.sqrt(sum(float(np.sum(grads[n] ** 2)) for n in names))
    report.grad_norm = norm
    scale = 1.0
    if state.clip_norm is not None and norm > state.clip_norm:
        scale = state.clip_norm / norm
    with no_grad():
        for name in names:
            p = params[name]
            g = scale * grads[name] + state.weight_decay * p.data
            v = state.velocity.get(name)
            v = g if v is None else state.momentum * v + g
            state.velocity[name] = v
            p.data -= lr * v
    zero_grad(params.values())
    state.iteration += 1
    return report
