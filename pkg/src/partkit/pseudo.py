"""Pseudo part labels from raw segmentation outputs.

The object class of an image is known at labeling time, so probabilities of
part categories owned by other objects are zeroed before the argmax. Raw
outputs carry a per-instance probability vector over all K part categories;
dense per-pixel predictions are bridged via connected components.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import AllZero, DimensionError, SpecError, VocabMismatch
from .parts import SOURCE_PSEUDO, AnnotationRecord, PartInstanceMask, PartVocabulary


@dataclass(frozen=True)
class RawSegOutput:
    """One candidate instance: a binary mask plus part-category probabilities."""

    mask: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        probs = np.asarray(self.probs, dtype=np.float64)
        if mask.ndim != 2 or not mask.any():
            raise SpecError("mask must be a non-empty 2-d binary grid")
        if probs.ndim != 1:
            raise SpecError(f"probs must be a vector, got shape {probs.shape}")
        if probs.size and (probs.min() < 0 or probs.max() > 1):
            raise SpecError("probs entries must lie in [0, 1]")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "probs", probs)


@dataclass(frozen=True)
class PseudoLabelConfig:
    score_threshold: float = 0.05
    max_instances_per_image: int = 32

    def __post_init__(self):
        if not 0.0 <= self.score_threshold <= 1.0:
            raise SpecError(
                f"score_threshold must lie in [0, 1], got {self.score_threshold}"
            )
        if self.max_instances_per_image < 1:
            raise SpecError("max_instances_per_image must be >= 1")


def category_filter(
    probs: np.ndarray, object_id: int, vocab: PartVocabulary
) -> np.ndarray:
    """Zero probabilities of part categories not owned by object_id."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (vocab.num_parts,):
        raise VocabMismatch(
            f"probs has shape {probs.shape}, vocabulary has {vocab.num_parts} parts"
        )
    if object_id not in vocab.parts_of:
        raise VocabMismatch(f"unknown object id {object_id}")
    out = np.zeros_like(probs)
    owned = list(vocab.parts_of[object_id])
    out[owned] = probs[owned]
    return out


def assign_part_label(filtered: np.ndarray) -> int:
    """Smallest index attaining the maximum probability."""
    filtered = np.asarray(filtered, dtype=np.float64)
    if filtered.size == 0 or filtered.max() <= 0.0:
        raise AllZero("no part category has positive probability")
    return int(np.argmax(filtered))


def generate_pseudo_record(
    outputs: list[RawSegOutput],
    object_id: int,
    vocab: PartVocabulary,
    cfg: PseudoLabelConfig | None = None,
    image_id: str = "pseudo",
) -> AnnotationRecord:
    """Filter, threshold, and label raw outputs into a pseudo annotation record."""
    cfg = cfg or PseudoLabelConfig()
    shapes = {out.mask.shape for out in outputs}
    if len(shapes) > 1:
        raise DimensionError(f"outputs disagree on mask shape: {sorted(shapes)}")

    kept: list[tuple[float, int, PartInstanceMask]] = []
    for idx, out in enumerate(outputs):
        filtered = category_filter(out.probs, object_id, vocab)
        score = float(filtered.max()) if filtered.size else 0.0
        if score <= 0.0 or score < cfg.score_threshold:
            continue
        part_id = assign_part_label(filtered)
        kept.append((score, idx, PartInstanceMask(out.mask, part_id, score=score)))

    # cap by score, earlier output on ties
    kept.sort(key=lambda item: (-item[0], item[1]))
    kept = kept[: cfg.max_instances_per_image]
    kept.sort(key=lambda item: item[1])

    return AnnotationRecord(
        image_id=image_id,
        object_id=object_id,
        instances=tuple(item[2] for item in kept),
        source=SOURCE_PSEUDO,
    )


def extract_instances(
    prob_map: np.ndarray, min_pixels: int = 1
) -> list[RawSegOutput]:
    """Split a dense (K+1, H, W) probability map into candidate instances.

    Channel K is background. Connected components of each predicted part
    label become instances; their probability vector is the mean over the
    component's pixels of the K part channels.
    """
    prob_map = np.asarray(prob_map, dtype=np.float64)
    if prob_map.ndim != 3 or prob_map.shape[0] < 2:
        raise DimensionError(
            f"expected a (K+1, H, W) probability map, got shape {prob_map.shape}"
        )
    num_parts = prob_map.shape[0] - 1
    predicted = np.argmax(prob_map, axis=0)

    outputs: list[RawSegOutput] = []
    for label in np.unique(predicted):
        if label == num_parts:
            continue
        components, count = ndimage.label(predicted == label)
        for comp in range(1, count + 1):
            mask = components == comp
            if mask.sum() < min_pixels:
                continue
            probs = prob_map[:num_parts, mask].mean(axis=1)
            outputs.append(RawSegOutput(mask=mask, probs=np.clip(probs, 0.0, 1.0)))
    return outputs
