"""Part vocabulary: object categories and their object-scoped part categories."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import SpecError


@dataclass(frozen=True)
class PartVocabulary:
    """Object categories, part categories, and the object-to-parts mapping.

    Part categories are object-scoped: every part id in [0, num_parts)
    belongs to exactly one object, so parts of different objects are
    distinct categories even when they share a human-readable name.
    """

    num_objects: int
    num_parts: int
    parts_of: dict[int, tuple[int, ...]]
    object_names: dict[int, str] | None = None
    part_names: dict[int, str] | None = None
    # objects explicitly allowed to have a single part category (the
    # "whole foreground is one part" case)
    single_part_exceptions: tuple[int, ...] = ()
    _owner: dict[int, int] = field(init=False, repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        if self.num_objects < 1:
            raise SpecError("vocabulary needs at least one object category")
        if set(self.parts_of.keys()) != set(range(self.num_objects)):
            raise SpecError("parts_of must map exactly the object ids 0..num_objects-1")
        owner: dict[int, int] = {}
        for obj, parts in self.parts_of.items():
            if len(parts) == 0:
                raise SpecError(f"object {obj} has no part categories")
            if len(set(parts)) != len(parts):
                raise SpecError(f"object {obj} lists duplicate part ids")
            for p in parts:
                if not 0 <= p < self.num_parts:
                    raise SpecError(f"part id {p} outside [0, {self.num_parts})")
                if p in owner:
                    raise SpecError(f"part id {p} appears in objects {owner[p]} and {obj}")
                owner[p] = obj
        if len(owner) != self.num_parts:
            missing = sorted(set(range(self.num_parts)) - set(owner))
            raise SpecError(f"part ids {missing} belong to no object")
        object.__setattr__(self, "_owner", owner)

    def object_of(self, part_id: int) -> int:
        """Return the object id owning ``part_id``."""
        try:
            return self._owner[part_id]
        except KeyError:
            raise SpecError(f"unknown part id {part_id}") from None

    def part_name(self, part_id: int) -> str:
        if self.part_names and part_id in self.part_names:
            return self.part_names[part_id]
        return f"part{part_id}"

    def object_name(self, object_id: int) -> str:
        if self.object_names and object_id in self.object_names:
            return self.object_names[object_id]
        return f"object{object_id}"


@dataclass(frozen=True)
class InclusionRelation:
    """Declares that ``child_part`` may sit inside ``parent_part`` of one object.

    Masks of an inclusion pair are allowed to overlap; at overlapping pixels
    the child part provides the supervision label.
    """

    object_id: int
    child_part: int
    parent_part: int

    def __post_init__(self):
        if self.child_part == self.parent_part:
            raise SpecError("inclusion relation cannot relate a part to itself")

    def check_against(self, vocab: PartVocabulary) -> None:
        parts = vocab.parts_of[self.object_id] if self.object_id in vocab.parts_of else ()
        if self.child_part not in parts or self.parent_part not in parts:
            raise SpecError(
                f"inclusion ({self.child_part} in {self.parent_part}) uses parts "
                f"outside object {self.object_id}"
            )
