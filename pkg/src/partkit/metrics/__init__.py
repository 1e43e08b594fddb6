"""Segmentation quality and human-consistency metrics."""

from .ap import (
    COCO_THRESHOLDS,
    Detection,
    ap50,
    average_precision,
    mean_average_precision,
)
from .consistency import ConsistencyResult, DecisionRecord, human_consistency
from .iou import box_iou, mask_iou, miou

__all__ = [
    "COCO_THRESHOLDS",
    "ConsistencyResult",
    "DecisionRecord",
    "Detection",
    "ap50",
    "average_precision",
    "box_iou",
    "human_consistency",
    "mask_iou",
    "mean_average_precision",
    "miou",
]
