"""Few-shot classification with part-crop feature branches.

A whole-image encoder ``g`` is combined with ``l`` lightweight branches,
each fed a crop of one of the image's largest parts.  Branch features are
fused as ``sum(alpha_i * p_i(c_i)) + (1 - sum(alpha_i)) * g(x)``, so the
coefficients sum to one by construction and ``alpha = 0`` recovers the
plain encoder exactly.  Evaluation follows the metric-learning protocol:
class prototypes are mean support features and queries are assigned to
the nearest prototype by cosine similarity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DimensionError, EmptyRecord, ShapeError, SpecError
from .parts.records import AnnotationRecord

# substream tags for seed derivation
_CROP_STREAM = 505
_EPISODE_STREAM = 606
_TRAIN_STREAM = 707

_COSINE_SCALE = 10.0
_NORM_EPS = 1e-12

DEFAULT_BRANCHES = 3

_PRESETS = {
    "5w1s": {"n_way": 5, "k_shot": 1},
    "5w5s": {"n_way": 5, "k_shot": 5},
}


@dataclass(frozen=True)
class EpisodeSpec:
    """Sampling plan for episodic evaluation or training."""

    n_way: int = 5
    k_shot: int = 1
    query_per_class: int = 15
    episodes: int = 600
    seed: int = 0

    def __post_init__(self):
        if self.n_way < 2:
            raise SpecError(f"n_way must be at least 2, got {self.n_way}")
        if self.k_shot < 1:
            raise SpecError(f"k_shot must be at least 1, got {self.k_shot}")
        if self.query_per_class < 1:
            raise SpecError(
                f"query_per_class must be at least 1, got {self.query_per_class}"
            )
        if self.episodes < 1:
            raise SpecError(f"episodes must be at least 1, got {self.episodes}")

    @classmethod
    def from_name(cls, name: str, **overrides) -> EpisodeSpec:
        """Build a spec from a preset label such as ``5w1s`` or ``5w5s``."""
        if name not in _PRESETS:
            raise SpecError(
                f"unknown episode preset {name!r}; expected one of {sorted(_PRESETS)}"
            )
        return cls(**{**_PRESETS[name], **overrides})


class ConvEncoder(nn.Module):
    """Conv3x3 + ReLU + max-pool stack with a linear feature projection."""

    def __init__(self, feature_dim: int = 64, in_channels: int = 3,
                 widths: tuple[int, ...] = (16, 32, 64)):
        super().__init__()
        if feature_dim < 1:
            raise SpecError(f"feature_dim must be positive, got {feature_dim}")
        if not widths:
            raise SpecError("widths must not be empty")
        layers: list[nn.Module] = []
        prev = in_channels
        for width in widths:
            layers += [
                nn.Conv2d(prev, width, kernel_size=3, padding=1),
                nn.ReLU(),
                nn.MaxPool2d(2),
            ]
            prev = width
        self.stages = nn.Sequential(*layers)
        self.proj = nn.Linear(prev, feature_dim)
        self.feature_dim = feature_dim
        self.min_input = 2 ** len(widths)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4:
            raise ShapeError(f"expected a batched image tensor, got shape {tuple(x.shape)}")
        if min(x.shape[-2:]) < self.min_input:
            raise ShapeError(
                f"input {tuple(x.shape[-2:])} too small for {len(self.stages) // 3} "
                f"pooling stages (minimum side {self.min_input})"
            )
        h = self.stages(x)
        h = h.mean(dim=(2, 3))
        return self.proj(h)


class FusionModel(nn.Module):
    """Whole-image encoder plus part-crop branches fused by trainable weights.

    The branches share one architecture but have independent parameters.
    ``alpha`` starts at zero so an untrained fusion model behaves exactly
    like its base encoder; the residual base weight ``1 - sum(alpha)``
    keeps the combination normalized without a constraint step.
    """

    def __init__(self, encoder: nn.Module, feature_dim: int,
                 num_branches: int = DEFAULT_BRANCHES, num_classes: int | None = None,
                 in_channels: int = 3, branch_widths: tuple[int, ...] = (16, 32, 64)):
        super().__init__()
        if num_branches < 1:
            raise SpecError(f"num_branches must be positive, got {num_branches}")
        if feature_dim < 1:
            raise SpecError(f"feature_dim must be positive, got {feature_dim}")
        self.encoder = encoder
        self.branches = nn.ModuleList(
            ConvEncoder(feature_dim, in_channels, branch_widths)
            for _ in range(num_branches)
        )
        self.alpha = nn.Parameter(torch.zeros(num_branches))
        self.head = nn.Linear(feature_dim, num_classes) if num_classes else nn.Identity()
        self.feature_dim = feature_dim

    @property
    def num_branches(self) -> int:
        return len(self.branches)

    def fused_features(self, images: torch.Tensor, crops: torch.Tensor) -> torch.Tensor:
        """Combine base and branch features; crops is (B, l, C, H, W)."""
        if crops.ndim != 5 or crops.shape[0] != images.shape[0]:
            raise ShapeError(
                f"crops must be (batch, {self.num_branches}, C, H, W) aligned with "
                f"images, got {tuple(crops.shape)} for batch {images.shape[0]}"
            )
        if crops.shape[1] != self.num_branches:
            raise ShapeError(
                f"expected {self.num_branches} crops per image, got {crops.shape[1]}"
            )
        base = self.encoder(images)
        if base.ndim != 2 or base.shape[1] != self.feature_dim:
            raise ShapeError(
                f"encoder produced shape {tuple(base.shape)}, expected "
                f"(batch, {self.feature_dim})"
            )
        fused = (1.0 - self.alpha.sum()) * base
        for i, branch in enumerate(self.branches):
            fused = fused + self.alpha[i] * branch(crops[:, i])
        return fused

    def forward(self, images: torch.Tensor, crops: torch.Tensor) -> torch.Tensor:
        return self.head(self.fused_features(images, crops))

    def fusion_weights(self) -> tuple[float, ...]:
        """Normalized coefficients (base weight first, then one per branch)."""
        branch = [float(a) for a in self.alpha.detach()]
        return (1.0 - sum(branch), *branch)


def _resize_bilinear(patch: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    if patch.shape[1:] == size:
        return patch.copy()
    tensor = torch.from_numpy(np.ascontiguousarray(patch)).unsqueeze(0)
    out = F.interpolate(tensor, size=size, mode="bilinear", align_corners=False)
    return out.squeeze(0).numpy()


def crop_largest_parts(image: np.ndarray, record: AnnotationRecord, l: int,
                       seed: int = 0, allow_fallback: bool = True) -> list[np.ndarray]:
    """Crop the ``l`` largest parts' bounding boxes, resized to the image size.

    Parts rank by mask pixel area descending with ties broken by part id
    (and mask content, so the result is independent of instance order).
    When the record holds fewer than ``l`` parts the remaining crops are
    seeded random rectangles, unless ``allow_fallback`` is off.
    """
    if l < 1:
        raise SpecError(f"crop count must be positive, got {l}")
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3:
        raise ShapeError(f"image must be (C, H, W), got shape {arr.shape}")
    height, width = arr.shape[1:]
    if record.mask_shape is not None and record.mask_shape != (height, width):
        raise DimensionError(
            f"record masks are {record.mask_shape}, image is {(height, width)}"
        )
    if not record.instances and not allow_fallback:
        raise EmptyRecord(f"record {record.image_id!r} has no part instance")

    ranked = sorted(
        record.instances,
        key=lambda inst: (-inst.area, inst.part_id, inst.mask.tobytes()),
    )
    crops = []
    for inst in ranked[:l]:
        x0, y0, x1, y1 = inst.bbox()
        crops.append(_resize_bilinear(arr[:, y0:y1, x0:x1], (height, width)))

    for k in range(l - len(crops)):
        rng = np.random.default_rng(np.random.SeedSequence([seed, _CROP_STREAM, k]))
        w = int(rng.integers(max(1, width // 4), max(2, width // 2 + 1)))
        h = int(rng.integers(max(1, height // 4), max(2, height // 2 + 1)))
        x0 = int(rng.integers(0, width - w + 1))
        y0 = int(rng.integers(0, height - h + 1))
        crops.append(_resize_bilinear(arr[:, y0:y0 + h, x0:x0 + w], (height, width)))
    return crops


def part_crop_batch(images: np.ndarray, records: list[AnnotationRecord], l: int,
                    seed: int = 0) -> torch.Tensor:
    """Stack per-image part crops into a (N, l, C, H, W) tensor."""
    if len(images) != len(records):
        raise SpecError(f"{len(images)} images but {len(records)} records")
    stacks = []
    for index, (image, record) in enumerate(zip(images, records)):
        item_seed = int(np.random.SeedSequence([seed, _CROP_STREAM, index]).generate_state(1)[0])
        crops = crop_largest_parts(image, record, l, seed=item_seed)
        stacks.append(np.stack(crops))
    return torch.from_numpy(np.stack(stacks))


@dataclass(frozen=True)
class EpisodeResult:
    """Mean episodic accuracy with a 95% confidence half-width."""

    mean_accuracy: float
    ci95: float
    episode_accuracies: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "mean_accuracy": self.mean_accuracy,
            "ci95": self.ci95,
            "episodes": len(self.episode_accuracies),
            "episode_accuracies": list(self.episode_accuracies),
        }


def _class_index(labels: np.ndarray, spec: EpisodeSpec) -> dict[int, np.ndarray]:
    classes = np.unique(labels)
    if len(classes) < spec.n_way:
        raise SpecError(
            f"{spec.n_way}-way episodes need at least {spec.n_way} classes, "
            f"dataset has {len(classes)}"
        )
    pools = {}
    need = spec.k_shot + spec.query_per_class
    for cls in classes:
        pool = np.flatnonzero(labels == cls)
        if len(pool) < need:
            raise SpecError(
                f"class {int(cls)} has {len(pool)} samples, episodes need {need}"
            )
        pools[int(cls)] = pool
    return pools


def _sample_episode(pools: dict[int, np.ndarray], spec: EpisodeSpec, stream: int,
                    episode: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pick support and query indices; returns (support, query, query targets)."""
    rng = np.random.default_rng(
        np.random.SeedSequence([spec.seed, stream, episode])
    )
    ways = np.sort(rng.choice(sorted(pools), size=spec.n_way, replace=False))
    support, query, targets = [], [], []
    for slot, cls in enumerate(ways):
        pool = pools[int(cls)]
        picked = rng.choice(len(pool), size=spec.k_shot + spec.query_per_class,
                            replace=False)
        support.append(pool[picked[: spec.k_shot]])
        query.append(pool[picked[spec.k_shot:]])
        targets.append(np.full(spec.query_per_class, slot))
    return np.concatenate(support), np.concatenate(query), np.concatenate(targets)


def _normalize(features: torch.Tensor) -> torch.Tensor:
    return features / features.norm(dim=-1, keepdim=True).clamp_min(_NORM_EPS)


def _prototype_logits(support: torch.Tensor, query: torch.Tensor,
                      n_way: int, k_shot: int) -> torch.Tensor:
    prototypes = support.reshape(n_way, k_shot, -1).mean(dim=1)
    return _COSINE_SCALE * _normalize(query) @ _normalize(prototypes).T


def _episode_features(model: nn.Module, images: torch.Tensor,
                      crops: torch.Tensor | None, indices: np.ndarray) -> torch.Tensor:
    batch = images[torch.from_numpy(indices)]
    if isinstance(model, FusionModel):
        return model.fused_features(batch, crops[torch.from_numpy(indices)])
    return model(batch)


def _as_eval_inputs(model, images, records, seed):
    images = np.asarray(images, dtype=np.float32)
    crops = None
    if isinstance(model, FusionModel):
        if records is None:
            raise SpecError("a fusion model needs part records for its crops")
        crops = part_crop_batch(images, records, model.num_branches, seed=seed)
    return torch.from_numpy(images), crops


def run_episodes(model: nn.Module, images, labels, spec: EpisodeSpec,
                 records: list[AnnotationRecord] | None = None,
                 batch_size: int = 64) -> EpisodeResult:
    """Episodic evaluation: nearest-prototype accuracy over sampled tasks."""
    labels = np.asarray(labels)
    pools = _class_index(labels, spec)
    image_t, crops = _as_eval_inputs(model, images, records, spec.seed)

    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            chunks = []
            for start in range(0, len(image_t), batch_size):
                idx = np.arange(start, min(start + batch_size, len(image_t)))
                chunks.append(_episode_features(model, image_t, crops, idx))
            features = torch.cat(chunks)

        accuracies = []
        for episode in range(spec.episodes):
            support, query, targets = _sample_episode(
                pools, spec, _EPISODE_STREAM, episode
            )
            logits = _prototype_logits(
                features[torch.from_numpy(support)],
                features[torch.from_numpy(query)],
                spec.n_way, spec.k_shot,
            )
            predicted = logits.argmax(dim=1).numpy()
            accuracies.append(float(np.mean(predicted == targets)))
    finally:
        model.train(was_training)

    mean = float(np.mean(accuracies))
    if len(accuracies) > 1:
        ci95 = float(1.96 * np.std(accuracies, ddof=1) / math.sqrt(len(accuracies)))
    else:
        ci95 = 0.0
    return EpisodeResult(mean, ci95, tuple(accuracies))


def train_episodic(model: nn.Module, images, labels, spec: EpisodeSpec,
                   records: list[AnnotationRecord] | None = None,
                   lr: float = 1e-3) -> tuple[nn.Module, list[dict]]:
    """Meta-train on episodes sampled from a stream disjoint from evaluation.

    Each step classifies the episode's queries against its support
    prototypes by scaled cosine similarity and minimizes cross entropy.
    Returns the model and a per-episode history of loss and accuracy.
    """
    labels = np.asarray(labels)
    pools = _class_index(labels, spec)
    image_t, crops = _as_eval_inputs(model, images, records, spec.seed)

    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    history = []
    model.train()
    for episode in range(spec.episodes):
        support, query, targets = _sample_episode(pools, spec, _TRAIN_STREAM, episode)
        logits = _prototype_logits(
            _episode_features(model, image_t, crops, support),
            _episode_features(model, image_t, crops, query),
            spec.n_way, spec.k_shot,
        )
        target_t = torch.from_numpy(targets).long()
        loss = F.cross_entropy(logits, target_t)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        accuracy = float((logits.argmax(dim=1) == target_t).float().mean())
        history.append(
            {"episode": episode, "loss": float(loss.detach()), "accuracy": accuracy}
        )
    model.eval()
    return model, history
