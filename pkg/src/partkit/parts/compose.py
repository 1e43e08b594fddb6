"""Composite supervision masks: flattening, object masks, downsampling."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, EmptyInput, OverlapError, SpecError, VocabMismatch
from .records import SOURCE_PSEUDO, AnnotationRecord, CompositeMask
from .vocab import InclusionRelation, PartVocabulary


def _ancestors(inclusions: tuple[InclusionRelation, ...]) -> dict[int, set[int]]:
    """Map each part to the set of parts it is (transitively) included in."""
    parent_of: dict[int, list[int]] = {}
    for rel in inclusions:
        parent_of.setdefault(rel.child_part, []).append(rel.parent_part)
    out: dict[int, set[int]] = {}

    def walk(part: int, trail: tuple[int, ...]) -> set[int]:
        if part in trail:
            raise SpecError(f"cyclic inclusion chain through part {part}")
        if part in out:
            return out[part]
        acc: set[int] = set()
        for parent in parent_of.get(part, []):
            acc.add(parent)
            acc |= walk(parent, trail + (part,))
        out[part] = acc
        return acc

    for part in list(parent_of):
        walk(part, ())
    return out


def compose_mask(record: AnnotationRecord, vocab: PartVocabulary) -> CompositeMask:
    """Flatten a record's instance masks into one composite label grid.

    Background pixels get label ``vocab.num_parts``. Overlaps in human
    annotations are legal only for inclusion pairs, where the included
    (child) part wins; pseudo annotations may overlap freely and the
    higher-scoring instance wins.
    """
    if not record.instances:
        raise EmptyInput(f"record {record.image_id} has no instances to compose")
    if not 0 <= record.object_id < vocab.num_objects:
        raise VocabMismatch(f"object id {record.object_id} not in vocabulary")
    allowed = set(vocab.parts_of[record.object_id])
    for inst in record.instances:
        if inst.part_id not in allowed:
            raise VocabMismatch(
                f"part {inst.part_id} does not belong to object {record.object_id}"
            )

    shape = record.mask_shape
    labels = np.full(shape, vocab.num_parts, dtype=np.int64)

    if record.source == SOURCE_PSEUDO:
        # score order; on ties the earlier-listed instance wins
        order = sorted(
            range(len(record.instances)),
            key=lambda i: (record.instances[i].score or 0.0, -i),
        )
        for i in order:
            inst = record.instances[i]
            labels[inst.mask] = inst.part_id
        return CompositeMask(labels, vocab.num_parts)

    ancestors = _ancestors(record.inclusions)
    insts = record.instances
    for i in range(len(insts)):
        for j in range(i + 1, len(insts)):
            if not np.logical_and(insts[i].mask, insts[j].mask).any():
                continue
            pi, pj = insts[i].part_id, insts[j].part_id
            related = pi in ancestors.get(pj, ()) or pj in ancestors.get(pi, ())
            if not related:
                raise OverlapError(
                    f"parts {pi} and {pj} overlap without an inclusion relation"
                )

    # paint ancestors first so included (deeper) parts overwrite them
    depth = {p: len(a) for p, a in ancestors.items()}
    order = sorted(range(len(insts)), key=lambda i: (depth.get(insts[i].part_id, 0), i))
    for i in order:
        labels[insts[i].mask] = insts[i].part_id
    return CompositeMask(labels, vocab.num_parts)


def object_mask_from_parts(record: AnnotationRecord) -> np.ndarray:
    """Union of all part instance masks: the object-level foreground."""
    if not record.instances:
        raise EmptyInput(f"record {record.image_id} has no instances")
    out = np.zeros(record.mask_shape, dtype=bool)
    for inst in record.instances:
        out |= inst.mask
    return out


def downsample_mask(m: CompositeMask, factor: int) -> CompositeMask:
    """Mode-pool the label grid over factor x factor blocks.

    Ties take the smallest label index, which keeps the result
    deterministic and biased toward foreground over background.
    """
    if factor < 1:
        raise DimensionError(f"factor must be positive, got {factor}")
    if factor == 1:
        return CompositeMask(m.labels, m.num_parts)
    h, w = m.labels.shape
    if h % factor or w % factor:
        raise DimensionError(f"grid {h}x{w} not divisible by factor {factor}")
    hf, wf = h // factor, w // factor
    blocks = (
        m.labels.reshape(hf, factor, wf, factor).transpose(0, 2, 1, 3).reshape(hf * wf, -1)
    )
    counts = np.zeros((hf * wf, m.num_parts + 1), dtype=np.int64)
    rows = np.repeat(np.arange(hf * wf), factor * factor)
    np.add.at(counts, (rows, blocks.ravel()), 1)
    # argmax returns the first (smallest) label among tied counts
    pooled = np.argmax(counts, axis=1).reshape(hf, wf)
    return CompositeMask(pooled, m.num_parts)
