"""Annotation records: per-image part instance masks and supervision targets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import SpecError
from .vocab import InclusionRelation

SOURCE_HUMAN = "human"
SOURCE_PSEUDO = "pseudo"


@dataclass(frozen=True)
class PartInstanceMask:
    """One binary part mask with its part category and optional confidence."""

    mask: np.ndarray
    part_id: int
    score: float | None = None

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        object.__setattr__(self, "mask", mask)
        if mask.ndim != 2:
            raise SpecError(f"part mask must be 2-d, got shape {mask.shape}")
        if not mask.any():
            raise SpecError("part mask has no foreground pixel")
        if self.part_id < 0:
            raise SpecError(f"negative part id {self.part_id}")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise SpecError(f"score {self.score} outside [0, 1]")

    @property
    def area(self) -> int:
        return int(self.mask.sum())

    def bbox(self) -> tuple[int, int, int, int]:
        """Tight bounding box (x0, y0, x1, y1), exclusive upper corner."""
        rows = np.flatnonzero(self.mask.any(axis=1))
        cols = np.flatnonzero(self.mask.any(axis=0))
        return int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1


@dataclass(frozen=True)
class AnnotationRecord:
    """Part annotations for one image: instances, inclusions, object label."""

    image_id: str
    object_id: int
    instances: tuple[PartInstanceMask, ...]
    inclusions: tuple[InclusionRelation, ...] = ()
    source: str = SOURCE_HUMAN

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        object.__setattr__(self, "inclusions", tuple(self.inclusions))
        if self.source not in (SOURCE_HUMAN, SOURCE_PSEUDO):
            raise SpecError(f"unknown annotation source {self.source!r}")
        shapes = {inst.mask.shape for inst in self.instances}
        if len(shapes) > 1:
            raise SpecError(f"instance masks disagree on image size: {sorted(shapes)}")

    @property
    def mask_shape(self) -> tuple[int, int] | None:
        if not self.instances:
            return None
        return self.instances[0].mask.shape


@dataclass(frozen=True)
class CompositeMask:
    """Per-pixel supervision target with label indices in [0, num_parts].

    Index ``num_parts`` is the background channel; the grid is the argmax
    view of the one-hot (K+1)-channel target, so exactly one channel is
    active per pixel by construction.
    """

    labels: np.ndarray
    num_parts: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if not np.issubdtype(labels.dtype, np.integer):
            labels = labels.astype(np.int64)
        object.__setattr__(self, "labels", labels)
        if labels.ndim != 2:
            raise SpecError(f"composite labels must be 2-d, got shape {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() > self.num_parts):
            raise SpecError(
                f"composite labels must lie in [0, {self.num_parts}], "
                f"got range [{labels.min()}, {labels.max()}]"
            )

    @property
    def background(self) -> int:
        return self.num_parts

    def one_hot(self) -> np.ndarray:
        """Expand to the explicit (K+1)-channel one-hot array, HxWx(K+1)."""
        eye = np.eye(self.num_parts + 1, dtype=np.uint8)
        return eye[self.labels]

    def foreground(self) -> np.ndarray:
        return self.labels != self.num_parts


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of the annotation rule checks."""

    violations: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "violations", tuple(self.violations))

    @property
    def passed(self) -> bool:
        return not self.violations

    def rules_hit(self) -> set[str]:
        return {rule for rule, _ in self.violations}

    def __str__(self) -> str:
        if self.passed:
            return "valid"
        lines = [f"{len(self.violations)} violation(s):"]
        lines += [f"  [{rule}] {detail}" for rule, detail in self.violations]
        return "\n".join(lines)
