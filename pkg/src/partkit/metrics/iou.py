"""Overlap measures for masks, boxes, and label grids."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from ..parts import CompositeMask


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


def box_iou(a: tuple[float, ...], b: tuple[float, ...]) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    ix0, iy0 = max(ax0, bx0), max(ay0, by0)
    ix1, iy1 = min(ax1, bx1), min(ay1, by1)
    iw, ih = max(0.0, ix1 - ix0), max(0.0, iy1 - iy0)
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    if union <= 0:
        return 0.0
    return float(inter / union)


def miou(pred: np.ndarray, target: CompositeMask) -> float:
    """Mean IoU over the classes present in the target grid."""
    pred = np.asarray(pred)
    if pred.shape != target.labels.shape:
        raise DimensionError(
            f"prediction shape {pred.shape} differs from target {target.labels.shape}"
        )
    scores = []
    for cls in np.unique(target.labels):
        scores.append(mask_iou(pred == cls, target.labels == cls))
    return float(np.mean(scores))
