"""Robustness evaluation across threat models."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from ..errors import DataError, SpecError
from .pgd import AttackConfig, pgd_attack

REFERENCE_IMAGE_SIZE = 224
ATTACK_ORDER = ("linf", "linf2", "l1", "l2")


def standard_threats(image_size: int, steps: int = 10) -> dict[str, AttackConfig]:
    """The four evaluation threats, with size-dependent bounds rescaled.

    The l-infinity budgets are per-pixel and transfer across resolutions
    unchanged. The l1 budget (75 at 224 squared) scales with pixel count and
    the l2 budget (2 at 224 squared) with its square root.
    """
    ratio = image_size / REFERENCE_IMAGE_SIZE
    return {
        "linf": AttackConfig("linf", 4 / 255, steps=steps, random_start=True),
        "linf2": AttackConfig("linf", 8 / 255, steps=steps, random_start=True),
        "l1": AttackConfig("l1", 75.0 * ratio * ratio, steps=steps, random_start=True),
        "l2": AttackConfig("l2", 2.0 * ratio, steps=steps, random_start=True),
    }


@dataclass(frozen=True)
class RobustnessTable:
    accuracies: dict[str, float]
    average: float

    def __post_init__(self):
        for name, value in self.accuracies.items():
            if not 0.0 <= value <= 1.0:
                raise SpecError(f"accuracy {name}={value} outside [0, 1]")
        attacked = [v for k, v in self.accuracies.items() if k != "clean"]
        if attacked:
            expected = sum(attacked) / len(attacked)
            if abs(expected - self.average) > 1e-9:
                raise SpecError(
                    f"average {self.average} != mean of attacked entries {expected}"
                )

    def to_dict(self) -> dict:
        return {"accuracies": dict(self.accuracies), "average": self.average}


@torch.no_grad()
def clean_accuracy(
    model: torch.nn.Module, images: torch.Tensor, targets: torch.Tensor,
    batch_size: int = 64,
) -> float:
    model.eval()
    correct = 0
    for start in range(0, images.shape[0], batch_size):
        logits = model(images[start : start + batch_size])
        correct += (logits.argmax(dim=1) == targets[start : start + batch_size]).sum().item()
    return correct / images.shape[0]


def attacked_accuracy(
    model: torch.nn.Module,
    images: torch.Tensor,
    targets: torch.Tensor,
    cfg: AttackConfig,
    batch_size: int = 64,
    seed: int = 0,
) -> float:
    model.eval()
    correct = 0
    for batch_index, start in enumerate(range(0, images.shape[0], batch_size)):
        xb = images[start : start + batch_size]
        yb = targets[start : start + batch_size]
        adv = pgd_attack(model, xb, yb, cfg, seed=seed + batch_index)
        with torch.no_grad():
            correct += (model(adv).argmax(dim=1) == yb).sum().item()
    return correct / images.shape[0]


def balanced_subset(
    targets: torch.Tensor, per_class: int
) -> torch.Tensor:
    """Indices of the first per_class samples of every class, dataset order."""
    if per_class < 1:
        raise SpecError("per_class must be >= 1")
    picks: list[int] = []
    for cls in sorted(set(targets.tolist())):
        idx = (targets == cls).nonzero(as_tuple=True)[0][:per_class]
        if idx.numel() < per_class:
            raise DataError(
                f"class {cls} has only {idx.numel()} samples, need {per_class}"
            )
        picks.extend(idx.tolist())
    return torch.tensor(picks, dtype=torch.long)


def evaluate_robustness(
    model: torch.nn.Module,
    images: torch.Tensor,
    targets: torch.Tensor,
    threats: dict[str, AttackConfig] | None = None,
    per_class: int | None = None,
    batch_size: int = 64,
    seed: int = 0,
) -> RobustnessTable:
    """Clean accuracy plus attacked accuracy per threat and their mean."""
    threats = threats if threats is not None else standard_threats(images.shape[-1])
    if per_class is not None:
        idx = balanced_subset(targets, per_class)
        images, targets = images[idx], targets[idx]
    accuracies = {"clean": clean_accuracy(model, images, targets, batch_size)}
    for name, cfg in threats.items():
        accuracies[name] = attacked_accuracy(
            model, images, targets, cfg, batch_size, seed=seed
        )
    attacked = [accuracies[name] for name in threats]
    average = sum(attacked) / len(attacked) if attacked else 0.0
    return RobustnessTable(accuracies=accuracies, average=average)
