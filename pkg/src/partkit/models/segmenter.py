"""Small dense segmenter used to produce raw part predictions.

A dilated fully convolutional net keeps full resolution, so its per-pixel
probabilities feed straight into instance extraction and pseudo-labeling.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .backbone import group_norm


class PixelSegmenter(nn.Module):
    def __init__(self, num_classes: int, in_channels: int = 3, width: int = 32):
        super().__init__()
        dilations = (1, 2, 4, 8)
        layers: list[nn.Module] = []
        ch = in_channels
        for d in dilations:
            layers += [
                nn.Conv2d(ch, width, 3, padding=d, dilation=d),
                group_norm(width),
                nn.GELU(),
            ]
            ch = width
        layers.append(nn.Conv2d(width, num_classes, 1))
        self.body = nn.Sequential(*layers)
        self.num_classes = num_classes

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


def train_segmenter(
    images: torch.Tensor,
    labels: torch.Tensor,
    num_classes: int,
    epochs: int = 30,
    batch_size: int = 16,
    lr: float = 3e-3,
    seed: int = 0,
    width: int = 32,
) -> PixelSegmenter:
    """Fit a segmenter to (B, 3, H, W) images and (B, H, W) label grids."""
    torch.manual_seed(seed)
    model = PixelSegmenter(num_classes, width=width)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    generator = torch.Generator().manual_seed(seed)
    n = images.shape[0]
    for _ in range(epochs):
        order = torch.randperm(n, generator=generator)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            optimizer.zero_grad()
            logits = model(images[idx])
            loss = nn.functional.cross_entropy(logits, labels[idx])
            loss.backward()
            optimizer.step()
    model.eval()
    return model


@torch.no_grad()
def predict_probs(model: PixelSegmenter, images: torch.Tensor) -> np.ndarray:
    """Per-pixel class probabilities, shape (B, num_classes, H, W)."""
    model.eval()
    return torch.softmax(model(images), dim=1).numpy()
