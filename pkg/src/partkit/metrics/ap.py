"""Average precision for instance predictions.

Score-descending greedy matching (ties by input order), one match per ground
truth, precision-recall curve integrated at 101 recall points. Ground truths
reuse the Detection type with the score ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import SpecError
from .iou import box_iou, mask_iou

COCO_THRESHOLDS = tuple(np.arange(0.5, 0.96, 0.05).round(2))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class Detection:
    category_id: int
    score: float = 1.0
    mask: np.ndarray | None = field(default=None)
    box: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise SpecError(f"score must lie in [0, 1], got {self.score}")
        if self.mask is None and self.box is None:
            raise SpecError("detection needs a mask or a box")
        if self.mask is not None:
            object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))
        if self.box is not None:
            x0, y0, x1, y1 = self.box
            if x1 <= x0 or y1 <= y0:
                raise SpecError(f"degenerate box {self.box}")


def _pair_iou(det: Detection, gt: Detection) -> float:
    if det.mask is not None and gt.mask is not None:
        return mask_iou(det.mask, gt.mask)
    if det.box is not None and gt.box is not None:
        return box_iou(det.box, gt.box)
    raise SpecError("detection and ground truth carry incompatible geometry")


def _category_ap(
    dets: list[Detection], gts: list[Detection], iou_threshold: float
) -> float:
    if not gts:
        return 0.0
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    matched = [False] * len(gts)
    tp = np.zeros(len(order))
    for rank, i in enumerate(order):
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if matched[j]:
                continue
            iou = _pair_iou(dets[i], gt)
            if iou >= iou_threshold and iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0:
            matched[best_j] = True
            tp[rank] = 1.0
    if not len(order):
        return 0.0
    cum_tp = np.cumsum(tp)
    recall = cum_tp / len(gts)
    precision = cum_tp / np.arange(1, len(order) + 1)
    # monotone envelope from the right
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    sampled = np.zeros_like(RECALL_POINTS)
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    valid = idx < len(precision)
    sampled[valid] = precision[idx[valid]]
    return float(sampled.mean())


def average_precision(
    dets: list[Detection], gts: list[Detection], iou_threshold: float = 0.5
) -> dict[int, float]:
    """AP per category present in the ground truths."""
    categories = sorted({gt.category_id for gt in gts})
    result = {}
    for cat in categories:
        cat_dets = [d for d in dets if d.category_id == cat]
        cat_gts = [g for g in gts if g.category_id == cat]
        result[cat] = _category_ap(cat_dets, cat_gts, iou_threshold)
    return result


def ap50(dets: list[Detection], gts: list[Detection]) -> float:
    per_category = average_precision(dets, gts, 0.5)
    return float(np.mean(list(per_category.values()))) if per_category else 0.0


def mean_average_precision(
    dets: list[Detection],
    gts: list[Detection],
    thresholds: tuple[float, ...] = COCO_THRESHOLDS,
) -> float:
    """AP averaged over categories and IoU thresholds 0.5:0.05:0.95."""
    values = []
    for threshold in thresholds:
        per_category = average_precision(dets, gts, threshold)
        if per_category:
            values.append(np.mean(list(per_category.values())))
    return float(np.mean(values)) if values else 0.0
