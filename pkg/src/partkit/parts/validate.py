"""Annotation rule checks and corpus statistics."""

from __future__ import annotations

import numpy as np

from ..errors import EmptyInput
from .records import AnnotationRecord, ValidationReport
from .vocab import PartVocabulary

DENSITY_BINS = ("1-2", "3-4", "5-6", "7+")

# allowed number of part categories per object, single-part objects excepted
PART_COUNT_RANGE = (3, 8)


def validate_annotation(
    record: AnnotationRecord,
    vocab: PartVocabulary,
    object_foreground: np.ndarray | None = None,
) -> ValidationReport:
    """Check one record against the annotation rules.

    Rules: (a) masks may overlap only for declared inclusion pairs, and,
    when an object foreground is supplied, must jointly cover it;
    (b) part ids belong to the record's object; (c) inclusion relations
    are acyclic; (d) the object's part-category count is within range
    unless the object carries the single-part exception.

    Violations are collected and reported, never raised.
    """
    violations: list[tuple[str, str]] = []

    if not 0 <= record.object_id < vocab.num_objects:
        violations.append(("b", f"object id {record.object_id} not in vocabulary"))
        return ValidationReport(tuple(violations))
    allowed = set(vocab.parts_of[record.object_id])

    for inst in record.instances:
        if inst.part_id not in allowed:
            violations.append(
                ("b", f"part {inst.part_id} not in object {record.object_id}'s parts")
            )
    for rel in record.inclusions:
        if rel.object_id != record.object_id:
            violations.append(
                ("b", f"inclusion relation declared for foreign object {rel.object_id}")
            )
        elif rel.child_part not in allowed or rel.parent_part not in allowed:
            violations.append(
                ("b", f"inclusion ({rel.child_part} in {rel.parent_part}) uses foreign parts")
            )

    # (c) cycle detection over the child -> parent digraph
    parents: dict[int, set[int]] = {}
    for rel in record.inclusions:
        parents.setdefault(rel.child_part, set()).add(rel.parent_part)
    state: dict[int, int] = {}  # 1 = on stack, 2 = done

    def cyclic(part: int) -> bool:
        if state.get(part) == 1:
            return True
        if state.get(part) == 2:
            return False
        state[part] = 1
        hit = any(cyclic(p) for p in parents.get(part, ()))
        state[part] = 2
        return hit

    if any(cyclic(p) for p in list(parents)):
        violations.append(("c", "inclusion relations contain a cycle"))
        ancestors: dict[int, set[int]] = {}
    else:
        ancestors = {}
        for part in parents:
            seen: set[int] = set()
            stack = [part]
            while stack:
                for parent in parents.get(stack.pop(), ()):
                    if parent not in seen:
                        seen.add(parent)
                        stack.append(parent)
            ancestors[part] = seen

    # (a) overlap between instances must be explained by an inclusion pair
    insts = record.instances
    for i in range(len(insts)):
        for j in range(i + 1, len(insts)):
            if not np.logical_and(insts[i].mask, insts[j].mask).any():
                continue
            pi, pj = insts[i].part_id, insts[j].part_id
            if pi in ancestors.get(pj, ()) or pj in ancestors.get(pi, ()):
                continue
            violations.append(
                ("a", f"parts {pi} and {pj} overlap without an inclusion relation")
            )

    # (a) coverage, only checkable against a supplied object foreground
    if object_foreground is not None:
        fg = np.asarray(object_foreground, dtype=bool)
        if record.instances and fg.shape != record.mask_shape:
            violations.append(
                ("a", f"object foreground {fg.shape} does not match masks {record.mask_shape}")
            )
        else:
            union = np.zeros(fg.shape, dtype=bool)
            for inst in record.instances:
                union |= inst.mask
            uncovered = int(np.logical_and(fg, ~union).sum())
            if uncovered:
                violations.append(
                    ("a", f"{uncovered} object pixels not covered by any part mask")
                )

    # (d) part-category count for the object
    n_parts = len(vocab.parts_of[record.object_id])
    lo, hi = PART_COUNT_RANGE
    single_ok = record.object_id in vocab.single_part_exceptions
    if not (lo <= n_parts <= hi) and not (n_parts == 1 and single_ok):
        violations.append(
            ("d", f"object {record.object_id} has {n_parts} part categories, "
                  f"expected {lo}-{hi} or a flagged single part")
        )

    return ValidationReport(tuple(violations))


def density_histogram(records: list[AnnotationRecord]) -> dict[str, float]:
    """Proportion of records per part-mask-count bin.

    Records without instances carry no part masks and are excluded from
    the denominator.
    """
    if not records:
        raise EmptyInput("no records to histogram")
    counts = dict.fromkeys(DENSITY_BINS, 0)
    total = 0
    for rec in records:
        n = len(rec.instances)
        if n == 0:
            continue
        total += 1
        if n <= 2:
            counts["1-2"] += 1
        elif n <= 4:
            counts["3-4"] += 1
        elif n <= 6:
            counts["5-6"] += 1
        else:
            counts["7+"] += 1
    if total == 0:
        raise EmptyInput("all records are empty")
    return {b: counts[b] / total for b in DENSITY_BINS}
