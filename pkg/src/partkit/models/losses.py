"""Training losses: focal segmentation term, smoothed classification term.

Per-scale targets come from mode pooling of the full-resolution composite
label grid. Pooling ties break toward the smaller label index; the ranking
trick below makes that explicit rather than relying on argmax internals.
"""

from __future__ import annotations

import torch
from torch.nn import functional as F

from ..errors import DomainError, ShapeError
from .mpm import MpmConfig


def focal_loss(p_t: torch.Tensor, gamma: float) -> torch.Tensor:
    """Mean of -(1 - p)^gamma * log(p) over true-class probabilities."""
    if (p_t <= 0).any():
        raise DomainError("focal loss needs probabilities in (0, 1]")
    if (p_t > 1).any():
        raise DomainError("probabilities above 1")
    return (-((1.0 - p_t) ** gamma) * torch.log(p_t)).mean()


def label_smoothed_ce(
    logits: torch.Tensor, targets: torch.Tensor, smoothing: float = 0.1
) -> torch.Tensor:
    return F.cross_entropy(logits, targets, label_smoothing=smoothing)


def mode_pool_labels(labels: torch.Tensor, factor: int, num_classes: int) -> torch.Tensor:
    """Modal label per block, ties to the smallest index; matches the numpy path."""
    if labels.ndim != 3:
        raise ShapeError(f"expected labels (B, H, W), got {tuple(labels.shape)}")
    b, h, w = labels.shape
    if factor == 1:
        return labels
    if h % factor or w % factor:
        raise ShapeError(f"dims {(h, w)} not divisible by factor {factor}")
    one_hot = F.one_hot(labels, num_classes).permute(0, 3, 1, 2)
    counts = F.avg_pool2d(one_hot.double(), factor) * (factor * factor)
    counts = counts.round().long()
    # rank by (count, -label): count differences dominate the label bonus
    arange = torch.arange(num_classes, device=labels.device).view(1, -1, 1, 1)
    score = counts * num_classes + (num_classes - 1 - arange)
    return score.argmax(dim=1)


def seg_focal_from_logits(
    seg_logits: torch.Tensor,
    target: torch.Tensor,
    gamma: float,
    background_index: int,
    background_weight: float = 1.0,
) -> torch.Tensor:
    """Focal loss over pixels from raw logits, numerically safe."""
    if seg_logits.shape[0] != target.shape[0] or seg_logits.shape[-2:] != target.shape[-2:]:
        raise ShapeError(
            f"seg logits {tuple(seg_logits.shape)} do not match targets {tuple(target.shape)}"
        )
    log_probs = F.log_softmax(seg_logits, dim=1)
    log_pt = log_probs.gather(1, target.unsqueeze(1)).squeeze(1)
    pt = log_pt.exp()
    per_pixel = -((1.0 - pt) ** gamma) * log_pt
    if background_weight == 1.0:
        return per_pixel.mean()
    weights = torch.where(
        target == background_index,
        torch.as_tensor(background_weight, dtype=per_pixel.dtype),
        torch.as_tensor(1.0, dtype=per_pixel.dtype),
    )
    return (per_pixel * weights).sum() / weights.sum()


def mpm_loss(
    class_logits: torch.Tensor,
    targets: torch.Tensor,
    seg_logits: list[torch.Tensor],
    labels: torch.Tensor,
    cfg: MpmConfig,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Combined objective: (total, classification term, segmentation term).

    ``labels`` is the batch of full-resolution composite label grids; each
    scale's target is mode-pooled from it.
    """
    l_cls = label_smoothed_ce(class_logits, targets, cfg.label_smoothing)
    if labels.ndim != 3:
        raise ShapeError(f"expected labels (B, H, W), got {tuple(labels.shape)}")
    h = labels.shape[-1]
    terms = []
    for logits in seg_logits:
        if logits.shape[1] != cfg.seg_classes:
            raise ShapeError(
                f"seg head emits {logits.shape[1]} channels, config says {cfg.seg_classes}"
            )
        if h % logits.shape[-1]:
            raise ShapeError(
                f"label width {h} not divisible by head width {logits.shape[-1]}"
            )
        factor = h // logits.shape[-1]
        target = mode_pool_labels(labels, factor, cfg.seg_classes)
        terms.append(
            seg_focal_from_logits(
                logits,
                target,
                cfg.focal_gamma,
                background_index=cfg.seg_classes - 1,
                background_weight=cfg.focal_background_weight,
            )
        )
    l_seg = torch.stack(terms).mean()
    total = l_cls + cfg.lam * l_seg
    return total, l_cls, l_seg
