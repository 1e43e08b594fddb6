"""Procedural part-annotated toy dataset.

Each class is a "creature" template: an elliptical body, a head disc attached
to the body rim, zero or more limb sticks, and a small patch marking inside
the body (an included part). Class identity is carried by layout alone; all
classes share one part palette, so colour is never discriminative.

Determinism contract: every value drawn during generation comes from a
seed-sequence stream keyed by (seed, role, class, sample), so output depends
only on the spec. Geometry and pixel noise use separate streams, which keeps
label grids invariant under noise_level changes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptyInput, RatioError, SpecError
from .parts import (
    AnnotationRecord,
    InclusionRelation,
    PartInstanceMask,
    PartVocabulary,
)

# role tags for seed streams
_TEMPLATE, _GEOMETRY, _NOISE, _SPLIT = 101, 202, 303, 404

_BODY_COLOR = np.array([0.55, 0.35, 0.20])
_HEAD_COLOR = np.array([0.20, 0.45, 0.60])
_LIMB_COLOR = np.array([0.35, 0.55, 0.25])
_PATCH_COLOR = np.array([0.78, 0.72, 0.30])
_BACKGROUND = 0.12


@dataclass(frozen=True)
class SynthSpec:
    num_objects: int = 4
    parts_per_object: int = 4
    image_size: int = 64
    samples_per_class: int = 10
    noise_level: float = 0.05
    seed: int = 0
    confusable_pairs: bool = False

    def __post_init__(self):
        if self.num_objects < 2:
            raise SpecError(f"num_objects must be >= 2, got {self.num_objects}")
        if not 3 <= self.parts_per_object <= 8:
            raise SpecError(
                f"parts_per_object must lie in [3, 8], got {self.parts_per_object}"
            )
        if self.image_size < 16:
            raise SpecError(f"image_size must be >= 16, got {self.image_size}")
        if self.samples_per_class < 2:
            raise SpecError(
                f"samples_per_class must be >= 2, got {self.samples_per_class}"
            )
        if not 0.0 <= self.noise_level <= 1.0:
            raise SpecError(f"noise_level must lie in [0, 1], got {self.noise_level}")
        if self.confusable_pairs and self.num_objects % 2:
            raise SpecError("confusable_pairs requires an even num_objects")


@dataclass(frozen=True)
class _Template:
    body_rx: float
    body_ry: float
    head_angle: float
    head_r: float
    limb_angles: tuple[float, ...]
    limb_len: tuple[float, ...]
    limb_w: tuple[float, ...]
    patch_ox: float
    patch_oy: float
    patch_r: float


def _draw_template(rng: np.random.Generator, num_limbs: int) -> _Template:
    base = rng.uniform(0, 2 * np.pi)
    spread = 2 * np.pi / max(num_limbs, 1)
    limb_angles = tuple(
        base + np.pi + i * spread + rng.uniform(-0.25, 0.25) for i in range(num_limbs)
    )
    sign = rng.choice([-1.0, 1.0], size=2)
    return _Template(
        body_rx=rng.uniform(0.16, 0.26),
        body_ry=rng.uniform(0.16, 0.26),
        head_angle=base,
        head_r=rng.uniform(0.07, 0.11),
        limb_angles=limb_angles,
        limb_len=tuple(rng.uniform(0.12, 0.20, size=num_limbs)),
        limb_w=tuple(rng.uniform(0.022, 0.045, size=num_limbs)),
        patch_ox=sign[0] * rng.uniform(0.30, 0.45),
        patch_oy=sign[1] * rng.uniform(0.30, 0.45),
        patch_r=rng.uniform(0.045, 0.065),
    )


def _templates(spec: SynthSpec) -> list[_Template]:
    out = []
    num_limbs = spec.parts_per_object - 3
    for c in range(spec.num_objects):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, _TEMPLATE, c]))
        template = _draw_template(rng, num_limbs)
        if spec.confusable_pairs and c % 2:
            # twin class: identical layout, patch mirrored through the centre
            template = replace(
                out[c - 1], patch_ox=-out[c - 1].patch_ox, patch_oy=-out[c - 1].patch_oy
            )
        out.append(template)
    return out


def _ellipse_radius(rx: float, ry: float, angle: float) -> float:
    return rx * ry / np.hypot(ry * np.cos(angle), rx * np.sin(angle))


def _ellipse_mask(xx, yy, cx, cy, rx, ry, tilt):
    dx, dy = xx - cx, yy - cy
    cos_t, sin_t = np.cos(tilt), np.sin(tilt)
    u = (dx * cos_t + dy * sin_t) / rx
    v = (-dx * sin_t + dy * cos_t) / ry
    return u * u + v * v <= 1.0


def _stick_mask(xx, yy, x0, y0, angle, length, halfw):
    dx, dy = xx - x0, yy - y0
    cos_t, sin_t = np.cos(angle), np.sin(angle)
    u = dx * cos_t + dy * sin_t
    v = -dx * sin_t + dy * cos_t
    return (u >= 0) & (u <= length) & (np.abs(v) <= halfw)


def _render_sample(
    template: _Template, size: int, geom: np.random.Generator
) -> list[np.ndarray] | None:
    """Rasterize one jittered creature; returns part masks or None on a bad draw."""
    S = float(size)
    coords = np.arange(size) + 0.5
    xx, yy = np.meshgrid(coords, coords, indexing="xy")

    scale = geom.uniform(0.9, 1.1)
    tilt = geom.uniform(-np.pi / 12, np.pi / 12)
    cx = S / 2 + geom.uniform(-0.05, 0.05) * S
    cy = S / 2 + geom.uniform(-0.05, 0.05) * S
    head_angle = template.head_angle + geom.uniform(-0.15, 0.15)
    limb_angles = [a + geom.uniform(-0.1, 0.1) for a in template.limb_angles]
    patch_ox = template.patch_ox + geom.uniform(-0.04, 0.04)
    patch_oy = template.patch_oy + geom.uniform(-0.04, 0.04)

    rx, ry = template.body_rx * scale * S, template.body_ry * scale * S
    body = _ellipse_mask(xx, yy, cx, cy, rx, ry, tilt)

    rh = template.head_r * scale * S
    rim = _ellipse_radius(rx, ry, head_angle)
    world = head_angle + tilt
    hx = cx + (rim + 0.55 * rh) * np.cos(world)
    hy = cy + (rim + 0.55 * rh) * np.sin(world)
    head_disc = _ellipse_mask(xx, yy, hx, hy, rh, rh, 0.0)
    head = head_disc & ~body

    blocked = body | head_disc
    limbs = []
    for angle, rel_len, rel_w in zip(
        limb_angles, template.limb_len, template.limb_w
    ):
        rim = _ellipse_radius(rx, ry, angle)
        world = angle + tilt
        x0 = cx + rim * np.cos(world)
        y0 = cy + rim * np.sin(world)
        stick = _stick_mask(
            xx, yy, x0, y0, world, rel_len * scale * S, rel_w * scale * S
        )
        limb = stick & ~blocked
        blocked = blocked | stick
        limbs.append(limb)

    px = cx + patch_ox * rx * np.cos(tilt) - patch_oy * ry * np.sin(tilt)
    py = cy + patch_ox * rx * np.sin(tilt) + patch_oy * ry * np.cos(tilt)
    patch = _ellipse_mask(xx, yy, px, py, template.patch_r * scale * S,
                          template.patch_r * scale * S, 0.0) & body

    masks = [body, head, *limbs, patch]
    if any(not m.any() for m in masks):
        return None
    return masks


def _paint(masks: list[np.ndarray], size: int, geom, noise, noise_level: float):
    colors = [_BODY_COLOR, _HEAD_COLOR] + [_LIMB_COLOR] * (len(masks) - 3) + [
        _PATCH_COLOR
    ]
    brightness = geom.uniform(0.9, 1.1, size=len(masks))
    tint = geom.uniform(-0.03, 0.03, size=3)
    img = np.full((size, size, 3), _BACKGROUND, dtype=np.float64) + tint
    # patch sits inside the body, so painting in list order keeps it visible
    for mask, color, gain in zip(masks, colors, brightness):
        img[mask] = color * gain
    if noise_level > 0:
        img = img + noise_level * noise.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def build_vocabulary(spec: SynthSpec) -> tuple[PartVocabulary, list[InclusionRelation]]:
    P = spec.parts_per_object
    parts_of = {}
    part_names = {}
    inclusions = []
    for c in range(spec.num_objects):
        ids = tuple(range(c * P, (c + 1) * P))
        parts_of[c] = ids
        names = ["body", "head"] + [f"limb{i}" for i in range(P - 3)] + ["patch"]
        for pid, name in zip(ids, names):
            part_names[pid] = f"species{c:02d}:{name}"
        inclusions.append(InclusionRelation(c, child_part=ids[-1], parent_part=ids[0]))
    vocab = PartVocabulary(
        num_objects=spec.num_objects,
        num_parts=spec.num_objects * P,
        parts_of=parts_of,
        object_names={c: f"species{c:02d}" for c in range(spec.num_objects)},
        part_names=part_names,
    )
    return vocab, inclusions


def generate_dataset(
    spec: SynthSpec,
) -> tuple[dict[str, np.ndarray], list[AnnotationRecord], PartVocabulary]:
    """Generate images, annotation records, and the matching vocabulary."""
    vocab, inclusions = build_vocabulary(spec)
    templates = _templates(spec)
    P = spec.parts_per_object

    images: dict[str, np.ndarray] = {}
    records: list[AnnotationRecord] = []
    for c in range(spec.num_objects):
        for i in range(spec.samples_per_class):
            geom = np.random.default_rng(
                np.random.SeedSequence([spec.seed, _GEOMETRY, c, i])
            )
            noise = np.random.default_rng(
                np.random.SeedSequence([spec.seed, _NOISE, c, i])
            )
            masks = None
            for _ in range(32):
                masks = _render_sample(templates[c], spec.image_size, geom)
                if masks is not None:
                    break
            if masks is None:
                raise SpecError(
                    f"could not place all parts for class {c} sample {i}; "
                    "image_size may be too small for the drawn layout"
                )
            image_id = f"{c:02d}-{i:04d}"
            images[image_id] = _paint(
                masks, spec.image_size, geom, noise, spec.noise_level
            )
            instances = tuple(
                PartInstanceMask(mask, part_id=c * P + k)
                for k, mask in enumerate(masks)
            )
            records.append(
                AnnotationRecord(
                    image_id=image_id,
                    object_id=c,
                    instances=instances,
                    inclusions=(inclusions[c],),
                )
            )
    return images, records, vocab


def split_dataset(
    records: list[AnnotationRecord],
    ratios: tuple[float, float, float],
    seed: int,
) -> tuple[list[AnnotationRecord], list[AnnotationRecord], list[AnnotationRecord]]:
    """Class-balanced train/val/test split, deterministic in seed."""
    if len(ratios) != 3:
        raise RatioError(f"expected 3 ratios, got {len(ratios)}")
    if any(r < 0 for r in ratios):
        raise RatioError(f"ratios must be non-negative, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise RatioError(f"ratios must sum to 1, got sum {sum(ratios)}")
    if not records:
        raise EmptyInput("no records to split")

    by_class: dict[int, list[AnnotationRecord]] = {}
    for record in records:
        by_class.setdefault(record.object_id, []).append(record)

    splits: tuple[list, list, list] = ([], [], [])
    for object_id in sorted(by_class):
        group = sorted(by_class[object_id], key=lambda r: r.image_id)
        n = len(group)
        rng = np.random.default_rng(np.random.SeedSequence([seed, _SPLIT, object_id]))
        order = rng.permutation(n)
        exact = [r * n for r in ratios]
        counts = [int(np.floor(e)) for e in exact]
        # hand leftovers to the largest fractional parts, earlier split on ties
        leftovers = n - sum(counts)
        fractions = sorted(
            range(3), key=lambda k: (-(exact[k] - counts[k]), k)
        )
        for k in fractions[:leftovers]:
            counts[k] += 1
        start = 0
        for split, count in zip(splits, counts):
            split.extend(group[j] for j in order[start : start + count])
            start += count
    return splits
