"""Importer for COCO-style part annotation files.

Each COCO category is treated as one part category; categories are grouped
into objects by their ``supercategory`` field (or by a name prefix such as
``"car:wheel"`` when requested). The importer builds a
:class:`PartVocabulary` with contiguous ids and returns, alongside the
records, a mapping table relating original category ids to the new
(object id, part id) pairs.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DataError, VocabMismatch
from . import rle
from .records import AnnotationRecord, PartInstanceMask
from .vocab import PartVocabulary


def _rasterize_polygons(polygons: list[list[float]], height: int, width: int) -> np.ndarray:
    from matplotlib.path import Path as MplPath

    ys, xs = np.mgrid[0:height, 0:width]
    # sample at pixel centers
    pts = np.column_stack([xs.ravel() + 0.5, ys.ravel() + 0.5])
    mask = np.zeros(height * width, dtype=bool)
    for poly in polygons:
        if len(poly) < 6:
            continue
        verts = np.asarray(poly, dtype=np.float64).reshape(-1, 2)
        mask |= MplPath(verts).contains_points(pts)
    return mask.reshape(height, width)


def _decode_segmentation(seg, height: int, width: int) -> np.ndarray:
    if isinstance(seg, list):
        return _rasterize_polygons(seg, height, width)
    if isinstance(seg, dict):
        counts = seg["counts"]
        h, w = seg.get("size", (height, width))
        if (h, w) != (height, width):
            raise DataError(f"segmentation size {(h, w)} != image size {(height, width)}")
        if isinstance(counts, str):
            return rle.decode_coco_compressed(counts, height, width)
        return rle.decode(list(counts), height, width)
    raise DataError(f"unsupported segmentation payload of type {type(seg).__name__}")


def _group_key(category: dict, group_by: str) -> str:
    if group_by == "supercategory":
        key = category.get("supercategory")
        if not key:
            raise DataError(f"category {category.get('id')} has no supercategory")
        return str(key)
    if group_by == "name_prefix":
        name = str(category.get("name", ""))
        if ":" not in name:
            raise DataError(f"category name {name!r} has no ':' object prefix")
        return name.split(":", 1)[0]
    raise DataError(f"unknown group_by mode {group_by!r}")


def import_coco(
    path: str | Path,
    group_by: str = "supercategory",
) -> tuple[PartVocabulary, list[AnnotationRecord], dict]:
    """Load a COCO part-annotation file.

    Returns ``(vocab, records, mapping)`` where ``mapping`` relates COCO
    category ids to the contiguous (object id, part id) pairs used here.
    """
    data = json.loads(Path(path).read_text())
    for key in ("categories", "images", "annotations"):
        if key not in data:
            raise DataError(f"COCO file missing {key!r} section")

    categories = sorted(data["categories"], key=lambda c: c["id"])
    if not categories:
        raise DataError("COCO file declares no categories")

    groups: dict[str, list[dict]] = {}
    for cat in categories:
        groups.setdefault(_group_key(cat, group_by), []).append(cat)

    object_ids = {name: i for i, name in enumerate(sorted(groups))}
    part_ids: dict[int, int] = {}
    parts_of: dict[int, tuple[int, ...]] = {}
    part_names: dict[int, str] = {}
    next_part = 0
    for name, obj_id in object_ids.items():
        owned = []
        for cat in groups[name]:
            part_ids[cat["id"]] = next_part
            part_names[next_part] = str(cat.get("name", next_part))
            owned.append(next_part)
            next_part += 1
        parts_of[obj_id] = tuple(owned)

    vocab = PartVocabulary(
        num_objects=len(object_ids),
        num_parts=next_part,
        parts_of=parts_of,
        object_names={i: n for n, i in object_ids.items()},
        part_names=part_names,
    )
    mapping = {
        "category_to_part": {str(cid): pid for cid, pid in part_ids.items()},
        "part_to_category": {str(pid): cid for cid, pid in part_ids.items()},
        "objects": {str(i): n for n, i in object_ids.items()},
    }

    image_meta = {img["id"]: img for img in data["images"]}
    by_image: dict = {}
    for ann in data["annotations"]:
        by_image.setdefault(ann["image_id"], []).append(ann)

    records = []
    for image_id in sorted(by_image):
        meta = image_meta.get(image_id)
        if meta is None:
            raise DataError(f"annotation references unknown image id {image_id}")
        h, w = meta["height"], meta["width"]
        instances = []
        owners = set()
        for ann in sorted(by_image[image_id], key=lambda a: a.get("id", 0)):
            cid = ann["category_id"]
            if cid not in part_ids:
                raise VocabMismatch(f"annotation uses undeclared category id {cid}")
            pid = part_ids[cid]
            owners.add(vocab.object_of(pid))
            mask = _decode_segmentation(ann["segmentation"], h, w)
            instances.append(
                PartInstanceMask(mask=mask, part_id=pid, score=ann.get("score"))
            )
        if len(owners) != 1:
            raise DataError(
                f"image {image_id} mixes parts of {len(owners)} objects; expected one"
            )
        records.append(
            AnnotationRecord(
                image_id=str(image_id),
                object_id=owners.pop(),
                instances=tuple(instances),
            )
        )
    return vocab, records, mapping
