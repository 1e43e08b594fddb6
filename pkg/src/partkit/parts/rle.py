"""Run-length encoding of binary masks.

Counts follow the COCO convention: column-major (Fortran) flattening,
alternating runs starting with the number of zeros.
"""

from __future__ import annotations

import numpy as np


def encode(mask: np.ndarray) -> list[int]:
    """Encode a binary HxW mask as a list of run lengths."""
    if mask.ndim != 2:
        raise ValueError(f"expected a 2-d mask, got shape {mask.shape}")
    flat = np.asarray(mask, dtype=np.uint8).flatten(order="F")
    if flat.size == 0:
        return []
    # boundaries between runs, plus virtual boundaries at both ends
    changes = np.flatnonzero(np.diff(flat)) + 1
    edges = np.concatenate(([0], changes, [flat.size]))
    counts = np.diff(edges).tolist()
    if flat[0] == 1:
        counts = [0] + counts
    return counts


def decode(counts: list[int], height: int, width: int) -> np.ndarray:
    """Decode run lengths back into a bool HxW mask."""
    total = sum(counts)
    if total != height * width:
        raise ValueError(f"run lengths sum to {total}, expected {height * width}")
    flat = np.zeros(height * width, dtype=bool)
    pos = 0
    value = False
    for run in counts:
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    return flat.reshape((height, width), order="F")


def decode_coco_compressed(rle_string: str, height: int, width: int) -> np.ndarray:
    """Decode a COCO compressed RLE string (LEB128 variant with deltas)."""
    counts: list[int] = []
    i = 0
    data = rle_string.encode("ascii")
    while i < len(data):
        value = 0
        shift = 0
        more = True
        while more:
            char = data[i] - 48
            value |= (char & 0x1F) << shift
            more = bool(char & 0x20)
            i += 1
            shift += 5
            if not more and (char & 0x10):
                value |= -1 << shift
        if len(counts) > 2:
            value += counts[-2]
        counts.append(value)
    return decode(counts, height, width)
