"""Hierarchical classification backbones.

Two desk-scale families sit behind one spec: a plain convolutional net and a
tiny hierarchical attention net. Both expose per-block feature maps so bypass
heads can attach to the last three blocks, and both use GroupNorm + GELU so
forward passes carry no batch statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from ..errors import ShapeError, SpecError

ARCHITECTURES = ("conv", "attention")


@dataclass(frozen=True)
class BackboneSpec:
    num_blocks: int = 4
    channels: tuple[int, ...] = (24, 48, 96, 192)
    downsample: tuple[int, ...] = (4, 2, 2, 2)
    num_classes: int = 4
    in_channels: int = 3
    arch: str = "conv"

    def __post_init__(self):
        if self.num_blocks < 3:
            raise SpecError(
                f"need at least 3 blocks for three supervised scales, got {self.num_blocks}"
            )
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "downsample", tuple(self.downsample))
        if len(self.channels) != self.num_blocks:
            raise SpecError("channels must list one width per block")
        if len(self.downsample) != self.num_blocks:
            raise SpecError("downsample must list one factor per block")
        if any(c < 1 for c in self.channels):
            raise SpecError("channel widths must be positive")
        for f in self.downsample:
            if f < 1 or (f & (f - 1)):
                raise SpecError(f"downsample factors must be powers of two, got {f}")
        if self.num_classes < 2:
            raise SpecError("num_classes must be >= 2")
        if self.arch not in ARCHITECTURES:
            raise SpecError(f"arch must be one of {ARCHITECTURES}, got {self.arch!r}")

    @property
    def total_downsample(self) -> int:
        total = 1
        for f in self.downsample:
            total *= f
        return total


def group_norm(channels: int) -> nn.GroupNorm:
    groups = 8 if channels % 8 == 0 else 1
    return nn.GroupNorm(groups, channels)


class ConvBlock(nn.Module):
    """Strided reduction followed by one refining convolution."""

    def __init__(self, in_ch: int, out_ch: int, factor: int):
        super().__init__()
        layers: list[nn.Module] = []
        ch = in_ch
        while factor > 1:
            layers += [
                nn.Conv2d(ch, out_ch, 3, stride=2, padding=1),
                group_norm(out_ch),
                nn.GELU(),
            ]
            ch = out_ch
            factor //= 2
        layers += [
            nn.Conv2d(ch, out_ch, 3, stride=1, padding=1),
            group_norm(out_ch),
            nn.GELU(),
        ]
        self.body = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


class AttentionBlock(nn.Module):
    """Strided patch merge plus one pre-norm self-attention + MLP pair."""

    def __init__(self, in_ch: int, out_ch: int, factor: int):
        super().__init__()
        self.merge = ConvBlock(in_ch, out_ch, factor)
        heads = 2 if out_ch % 2 == 0 else 1
        self.norm1 = nn.LayerNorm(out_ch)
        self.attn = nn.MultiheadAttention(out_ch, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(out_ch)
        self.mlp = nn.Sequential(
            nn.Linear(out_ch, 2 * out_ch), nn.GELU(), nn.Linear(2 * out_ch, out_ch)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.merge(x)
        b, c, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        normed = self.norm1(tokens)
        attended, _ = self.attn(normed, normed, normed, need_weights=False)
        tokens = tokens + attended
        tokens = tokens + self.mlp(self.norm2(tokens))
        return tokens.transpose(1, 2).reshape(b, c, h, w)


class VanillaNet(nn.Module):
    """Backbone blocks plus a pooled linear classifier head."""

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        self.spec = spec
        block_cls = ConvBlock if spec.arch == "conv" else AttentionBlock
        blocks = []
        ch = spec.in_channels
        for out_ch, factor in zip(spec.channels, spec.downsample):
            blocks.append(block_cls(ch, out_ch, factor))
            ch = out_ch
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Linear(spec.channels[-1], spec.num_classes)

    def block_features(self, x: torch.Tensor) -> list[torch.Tensor]:
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(
                f"expected input (B, {self.spec.in_channels}, H, W), got {tuple(x.shape)}"
            )
        if x.shape[-2] % self.spec.total_downsample or x.shape[-1] % self.spec.total_downsample:
            raise ShapeError(
                f"spatial dims {tuple(x.shape[-2:])} not divisible by "
                f"total downsample {self.spec.total_downsample}"
            )
        features = []
        for block in self.blocks:
            x = block(x)
            features.append(x)
        return features

    def classify(self, deepest: torch.Tensor) -> torch.Tensor:
        return self.head(deepest.mean(dim=(2, 3)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.classify(self.block_features(x)[-1])


def build_backbone(spec: BackboneSpec) -> VanillaNet:
    return VanillaNet(spec)


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
