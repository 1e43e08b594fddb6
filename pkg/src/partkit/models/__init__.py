"""Backbones, multi-scale part supervision, losses, and checkpoints."""

from .backbone import BackboneSpec, VanillaNet, build_backbone, parameter_count
from .checkpoint import load_checkpoint, save_checkpoint
from .losses import (
    focal_loss,
    label_smoothed_ce,
    mode_pool_labels,
    mpm_loss,
    seg_focal_from_logits,
)
from .mpm import (
    MpmConfig,
    MpmModel,
    build_mpm,
    bypass_parameter_count,
    forward_infer,
    strip_auxiliary,
)
from .segmenter import PixelSegmenter, predict_probs, train_segmenter

__all__ = [
    "BackboneSpec",
    "MpmConfig",
    "MpmModel",
    "PixelSegmenter",
    "VanillaNet",
    "build_backbone",
    "build_mpm",
    "bypass_parameter_count",
    "focal_loss",
    "forward_infer",
    "label_smoothed_ce",
    "load_checkpoint",
    "mode_pool_labels",
    "mpm_loss",
    "parameter_count",
    "predict_probs",
    "save_checkpoint",
    "seg_focal_from_logits",
    "strip_auxiliary",
    "train_segmenter",
]
