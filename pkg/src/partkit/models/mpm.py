"""Multi-scale part supervision around a vanilla backbone.

Lightweight bypass heads read the last three block outputs and emit part
segmentation logits at each native resolution. With top-down fusion on, the
deepest projection is upsampled and added into shallower ones before the
logit layer. The classifier path never sees the bypass, so stripping it
recovers the vanilla network exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from ..errors import SpecError
from .backbone import (
    BackboneSpec,
    VanillaNet,
    build_backbone,
    group_norm,
    parameter_count,
)

SUPERVISED_SCALES = 3


@dataclass(frozen=True)
class MpmConfig:
    seg_classes: int
    lam: float = 1.0
    focal_gamma: float = 2.0
    topdown: bool = True
    head_width: int = 64
    focal_background_weight: float = 1.0
    label_smoothing: float = 0.1

    def __post_init__(self):
        if self.seg_classes < 2:
            raise SpecError("seg_classes must cover >= 1 part plus background")
        if self.lam < 0:
            raise SpecError(f"lambda must be >= 0, got {self.lam}")
        if self.focal_gamma < 0:
            raise SpecError(f"focal_gamma must be >= 0, got {self.focal_gamma}")
        if self.head_width < 1:
            raise SpecError("head_width must be positive")
        if self.focal_background_weight < 0:
            raise SpecError("focal_background_weight must be >= 0")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise SpecError("label_smoothing must lie in [0, 1)")


class MpmModel(nn.Module):
    def __init__(self, backbone: VanillaNet, cfg: MpmConfig):
        super().__init__()
        self.backbone = backbone
        self.cfg = cfg
        spec = backbone.spec
        widths = spec.channels[-SUPERVISED_SCALES:]
        w = cfg.head_width
        self.proj = nn.ModuleList(
            [nn.Sequential(nn.Conv2d(c, w, 1), group_norm(w), nn.GELU()) for c in widths]
        )
        if cfg.topdown:
            # one lateral mix per fusion step: deepest into middle, middle into shallowest
            self.lateral = nn.ModuleList(
                [nn.Conv2d(w, w, 1) for _ in range(SUPERVISED_SCALES - 1)]
            )
        else:
            self.lateral = nn.ModuleList()
        self.logits = nn.ModuleList(
            [nn.Conv2d(w, cfg.seg_classes, 1) for _ in range(SUPERVISED_SCALES)]
        )
        # upsample ratios between consecutive supervised scales
        self._ratios = spec.downsample[-(SUPERVISED_SCALES - 1):]

    def forward_train(self, x: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        features = self.backbone.block_features(x)
        class_logits = self.backbone.classify(features[-1])
        scales = features[-SUPERVISED_SCALES:]
        projected = [proj(f) for proj, f in zip(self.proj, scales)]
        if self.cfg.topdown:
            for i in range(SUPERVISED_SCALES - 2, -1, -1):
                above = F.interpolate(
                    projected[i + 1], scale_factor=self._ratios[i], mode="nearest"
                )
                projected[i] = projected[i] + self.lateral[i](above)
        seg_logits = [head(p) for head, p in zip(self.logits, projected)]
        return class_logits, seg_logits

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.backbone(x)


def build_mpm(spec: BackboneSpec, cfg: MpmConfig) -> MpmModel:
    model = MpmModel(build_backbone(spec), cfg)
    backbone_params = parameter_count(model.backbone)
    bypass_params = parameter_count(model) - backbone_params
    if bypass_params >= backbone_params:
        raise SpecError(
            f"bypass must stay lighter than the backbone: "
            f"{bypass_params} vs {backbone_params} parameters"
        )
    return model


def bypass_parameter_count(model: MpmModel) -> int:
    return parameter_count(model) - parameter_count(model.backbone)


def strip_auxiliary(model: MpmModel) -> VanillaNet:
    """Inference view: a fresh vanilla net carrying the trained backbone weights."""
    vanilla = build_backbone(model.backbone.spec)
    state = {k: v.detach().clone() for k, v in model.backbone.state_dict().items()}
    vanilla.load_state_dict(state)
    return vanilla


def forward_infer(model: MpmModel | VanillaNet, x: torch.Tensor) -> torch.Tensor:
    return model(x)
