"""Adversarial training loop.

Inner maximization perturbs the classification loss only; the outer update
descends the full objective (classification plus weighted segmentation when
the model carries bypass heads). SGD with momentum, cosine learning-rate
decay, and an exponential moving average of all weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch.nn import functional as F

from ..errors import DataError, SpecError
from ..models.losses import label_smoothed_ce, mpm_loss
from ..models.mpm import MpmModel
from .pgd import AttackConfig, pgd_attack


@dataclass(frozen=True)
class TrainRecipe:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 30
    batch_size: int = 64
    ema_decay: float = 0.9998
    label_smoothing: float = 0.1
    attack: AttackConfig | None = field(default=None)
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise SpecError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise SpecError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise SpecError("weight_decay must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise SpecError("epochs and batch_size must be >= 1")
        if not 0 < self.ema_decay < 1:
            raise SpecError(f"ema_decay must lie in (0, 1), got {self.ema_decay}")
        if not 0 <= self.label_smoothing < 1:
            raise SpecError("label_smoothing must lie in [0, 1)")


class EmaTracker:
    """shadow <- decay * shadow + (1 - decay) * weight after every step."""

    def __init__(self, model: torch.nn.Module, decay: float):
        self.decay = decay
        self.shadow = {
            name: param.detach().clone()
            for name, param in model.state_dict().items()
        }

    @torch.no_grad()
    def update(self, model: torch.nn.Module) -> None:
        for name, param in model.state_dict().items():
            if param.dtype.is_floating_point:
                self.shadow[name].mul_(self.decay).add_(
                    param, alpha=1.0 - self.decay
                )
            else:
                self.shadow[name].copy_(param)

    def state_dict(self) -> dict:
        return {k: v.clone() for k, v in self.shadow.items()}


def adversarial_train(
    model: torch.nn.Module,
    images: torch.Tensor,
    targets: torch.Tensor,
    recipe: TrainRecipe,
    seg_labels: torch.Tensor | None = None,
    log_path: str | Path | None = None,
) -> tuple[torch.nn.Module, dict, list[dict]]:
    """Train in place; returns (model, ema state dict, per-epoch metrics)."""
    is_mpm = isinstance(model, MpmModel)
    if is_mpm and model.cfg.lam > 0 and seg_labels is None:
        raise DataError(
            "part supervision weight is positive but no composite masks were given"
        )
    if images.shape[0] != targets.shape[0]:
        raise DataError("images and targets disagree on sample count")

    torch.manual_seed(recipe.seed)
    optimizer = torch.optim.SGD(
        model.parameters(),
        lr=recipe.lr,
        momentum=recipe.momentum,
        weight_decay=recipe.weight_decay,
    )
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=recipe.epochs
    )
    ema = EmaTracker(model, recipe.ema_decay)
    generator = torch.Generator().manual_seed(recipe.seed)

    def attack_loss(logits, y):
        return label_smoothed_ce(logits, y, recipe.label_smoothing)

    n = images.shape[0]
    metrics: list[dict] = []
    log_file = Path(log_path).open("w") if log_path else None
    try:
        for epoch in range(recipe.epochs):
            order = torch.randperm(n, generator=generator)
            epoch_loss = epoch_cls = epoch_seg = 0.0
            correct = 0
            batches = 0
            for start in range(0, n, recipe.batch_size):
                idx = order[start : start + recipe.batch_size]
                xb, yb = images[idx], targets[idx]
                if recipe.attack is not None and recipe.attack.epsilon > 0:
                    xb = pgd_attack(model, xb, yb, recipe.attack, loss_fn=attack_loss)
                optimizer.zero_grad()
                if is_mpm and seg_labels is not None:
                    class_logits, seg_logits = model.forward_train(xb)
                    total, l_cls, l_seg = mpm_loss(
                        class_logits, yb, seg_logits, seg_labels[idx], model.cfg
                    )
                else:
                    class_logits = model(xb)
                    total = l_cls = attack_loss(class_logits, yb)
                    l_seg = torch.zeros(())
                total.backward()
                optimizer.step()
                ema.update(model)
                epoch_loss += total.item()
                epoch_cls += l_cls.item()
                epoch_seg += l_seg.item()
                correct += (class_logits.argmax(dim=1) == yb).sum().item()
                batches += 1
            entry = {
                "epoch": epoch,
                "loss": epoch_loss / batches,
                "cls_loss": epoch_cls / batches,
                "seg_loss": epoch_seg / batches,
                "train_acc": correct / n,
                "lr": scheduler.get_last_lr()[0],
            }
            metrics.append(entry)
            if log_file:
                log_file.write(json.dumps(entry, sort_keys=True) + "\n")
            scheduler.step()
    finally:
        if log_file:
            log_file.close()
    model.eval()
    return model, ema.state_dict(), metrics
