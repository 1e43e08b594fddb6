"""Projected gradient ascent on the classification loss.

The attack always reads the model's plain classification output, so a model
with auxiliary training heads and its stripped inference view produce
identical adversarial examples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch
from torch.nn import functional as F

from ..errors import SpecError
from .projections import NORMS, project

LossFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class AttackConfig:
    norm: str
    epsilon: float
    steps: int = 2
    step_size: float | None = None
    random_start: bool = False
    sparse_fraction: float = 0.01

    def __post_init__(self):
        if self.norm not in NORMS:
            raise SpecError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.epsilon < 0:
            raise SpecError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.steps < 1:
            raise SpecError(f"steps must be >= 1, got {self.steps}")
        if self.step_size is not None and self.step_size <= 0 and self.epsilon > 0:
            raise SpecError(f"step_size must be > 0, got {self.step_size}")
        if not 0 < self.sparse_fraction <= 1:
            raise SpecError("sparse_fraction must lie in (0, 1]")

    @property
    def resolved_step_size(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.0 * self.epsilon / self.steps


def _ascent_direction(grad: torch.Tensor, cfg: AttackConfig) -> torch.Tensor:
    flat = grad.reshape(grad.shape[0], -1)
    if cfg.norm == "linf":
        return grad.sign()
    if cfg.norm == "l2":
        norms = flat.norm(dim=1).clamp_min(1e-12)
        return (flat / norms.unsqueeze(1)).reshape(grad.shape)
    # l1: move only the k largest-magnitude coordinates, unit l1 step
    k = max(1, int(cfg.sparse_fraction * flat.shape[1]))
    _, idx = flat.abs().topk(k, dim=1)
    direction = torch.zeros_like(flat)
    direction.scatter_(1, idx, flat.gather(1, idx).sign() / k)
    return direction.reshape(grad.shape)


def pgd_attack(
    model: torch.nn.Module,
    x: torch.Tensor,
    y: torch.Tensor,
    cfg: AttackConfig,
    loss_fn: LossFn | None = None,
    seed: int = 0,
) -> torch.Tensor:
    """Return adversarial examples within the norm ball and the [0, 1] box."""
    loss_fn = loss_fn or F.cross_entropy
    if cfg.epsilon == 0:
        return x.detach().clone()

    if cfg.random_start:
        generator = torch.Generator().manual_seed(seed)
        delta = (
            torch.rand(x.shape, generator=generator, dtype=x.dtype) * 2 - 1
        ) * cfg.epsilon
        delta = project(delta, cfg.norm, cfg.epsilon)
    else:
        delta = torch.zeros_like(x)

    step = cfg.resolved_step_size
    for _ in range(cfg.steps):
        delta = delta.detach().requires_grad_(True)
        adv = (x + delta).clamp(0.0, 1.0)
        loss = loss_fn(model(adv), y)
        (grad,) = torch.autograd.grad(loss, delta)
        with torch.no_grad():
            delta = delta + step * _ascent_direction(grad, cfg)
            delta = project(delta, cfg.norm, cfg.epsilon)
    return (x + delta).clamp(0.0, 1.0).detach()
