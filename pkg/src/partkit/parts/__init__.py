"""Part vocabularies, annotation records, and mask operations."""

from .compose import compose_mask, downsample_mask, object_mask_from_parts
from .records import (
    SOURCE_HUMAN,
    SOURCE_PSEUDO,
    AnnotationRecord,
    CompositeMask,
    PartInstanceMask,
    ValidationReport,
)
from .validate import DENSITY_BINS, PART_COUNT_RANGE, density_histogram, validate_annotation
from .vocab import InclusionRelation, PartVocabulary

__all__ = [
    "AnnotationRecord",
    "CompositeMask",
    "DENSITY_BINS",
    "InclusionRelation",
    "PART_COUNT_RANGE",
    "PartInstanceMask",
    "PartVocabulary",
    "SOURCE_HUMAN",
    "SOURCE_PSEUDO",
    "ValidationReport",
    "compose_mask",
    "density_histogram",
    "downsample_mask",
    "object_mask_from_parts",
    "validate_annotation",
]
