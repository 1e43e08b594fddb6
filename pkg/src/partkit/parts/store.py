"""On-disk annotation store.

Layout::

    store/
      vocab.json        vocabulary manifest + object-level inclusion dictionary
      records/<id>.json one record per image, masks run-length encoded
      images.npz        optional image arrays keyed by image id

All JSON is written with sorted keys so identical inputs produce
byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DataError
from . import rle
from .records import AnnotationRecord, PartInstanceMask
from .vocab import InclusionRelation, PartVocabulary

SCHEMA_VERSION = 1


def _dump_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def vocab_to_dict(vocab: PartVocabulary, inclusions: list[InclusionRelation]) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "num_objects": vocab.num_objects,
        "num_parts": vocab.num_parts,
        "parts_of": {str(k): list(v) for k, v in vocab.parts_of.items()},
        "object_names": {str(k): v for k, v in (vocab.object_names or {}).items()},
        "part_names": {str(k): v for k, v in (vocab.part_names or {}).items()},
        "single_part_exceptions": sorted(vocab.single_part_exceptions),
        "inclusions": [[r.object_id, r.child_part, r.parent_part] for r in inclusions],
    }


def vocab_from_dict(data: dict) -> tuple[PartVocabulary, list[InclusionRelation]]:
    vocab = PartVocabulary(
        num_objects=data["num_objects"],
        num_parts=data["num_parts"],
        parts_of={int(k): tuple(v) for k, v in data["parts_of"].items()},
        object_names={int(k): v for k, v in data.get("object_names", {}).items()} or None,
        part_names={int(k): v for k, v in data.get("part_names", {}).items()} or None,
        single_part_exceptions=tuple(data.get("single_part_exceptions", [])),
    )
    inclusions = [InclusionRelation(o, c, p) for o, c, p in data.get("inclusions", [])]
    return vocab, inclusions


def record_to_dict(record: AnnotationRecord) -> dict:
    shape = record.mask_shape or (0, 0)
    return {
        "schema_version": SCHEMA_VERSION,
        "image_id": record.image_id,
        "object_id": record.object_id,
        "source": record.source,
        "height": shape[0],
        "width": shape[1],
        "instances": [
            {"part_id": inst.part_id, "score": inst.score, "rle": rle.encode(inst.mask)}
            for inst in record.instances
        ],
        "inclusions": [[r.object_id, r.child_part, r.parent_part] for r in record.inclusions],
    }


def record_from_dict(data: dict) -> AnnotationRecord:
    h, w = data["height"], data["width"]
    instances = tuple(
        PartInstanceMask(
            mask=rle.decode(item["rle"], h, w),
            part_id=item["part_id"],
            score=item.get("score"),
        )
        for item in data["instances"]
    )
    inclusions = tuple(InclusionRelation(o, c, p) for o, c, p in data.get("inclusions", []))
    return AnnotationRecord(
        image_id=data["image_id"],
        object_id=data["object_id"],
        instances=instances,
        inclusions=inclusions,
        source=data.get("source", "human"),
    )


def save_store(
    root: str | Path,
    vocab: PartVocabulary,
    records: list[AnnotationRecord],
    images: dict[str, np.ndarray] | None = None,
    inclusions: list[InclusionRelation] | None = None,
) -> Path:
    """Write a complete store directory; returns its path."""
    root = Path(root)
    (root / "records").mkdir(parents=True, exist_ok=True)
    _dump_json(root / "vocab.json", vocab_to_dict(vocab, inclusions or []))
    for record in records:
        _dump_json(root / "records" / f"{record.image_id}.json", record_to_dict(record))
    if images is not None:
        np.savez_compressed(root / "images.npz", **images)
    return root


def load_vocab(root: str | Path) -> tuple[PartVocabulary, list[InclusionRelation]]:
    path = Path(root) / "vocab.json"
    if not path.exists():
        raise DataError(f"no vocab.json under {root}")
    return vocab_from_dict(json.loads(path.read_text()))


def load_records(root: str | Path) -> list[AnnotationRecord]:
    rec_dir = Path(root) / "records"
    if not rec_dir.is_dir():
        raise DataError(f"no records/ directory under {root}")
    records = []
    for path in sorted(rec_dir.glob("*.json")):
        records.append(record_from_dict(json.loads(path.read_text())))
    return records


def load_images(root: str | Path) -> dict[str, np.ndarray]:
    path = Path(root) / "images.npz"
    if not path.exists():
        raise DataError(f"no images.npz under {root}")
    with np.load(path) as bundle:
        return {key: bundle[key] for key in bundle.files}
