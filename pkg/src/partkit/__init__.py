"""Part-supervised robust recognition toolkit."""

__version__ = "0.1.0"

from .attacks import (
    AttackConfig,
    RobustnessTable,
    TrainRecipe,
    adversarial_train,
    evaluate_robustness,
    pgd_attack,
    project,
    standard_threats,
)
from .fewshot import (
    ConvEncoder,
    EpisodeSpec,
    FusionModel,
    crop_largest_parts,
    run_episodes,
    train_episodic,
)
from .metrics import (
    DecisionRecord,
    Detection,
    ap50,
    average_precision,
    human_consistency,
    mask_iou,
    mean_average_precision,
    miou,
)
from .models import (
    BackboneSpec,
    MpmConfig,
    MpmModel,
    VanillaNet,
    build_backbone,
    build_mpm,
    load_checkpoint,
    mpm_loss,
    save_checkpoint,
    strip_auxiliary,
)
from .parts import (
    AnnotationRecord,
    CompositeMask,
    InclusionRelation,
    PartInstanceMask,
    PartVocabulary,
    compose_mask,
    density_histogram,
    downsample_mask,
    object_mask_from_parts,
    validate_annotation,
)
from .pseudo import (
    PseudoLabelConfig,
    RawSegOutput,
    assign_part_label,
    category_filter,
    extract_instances,
    generate_pseudo_record,
)
from .synth import SynthSpec, generate_dataset, split_dataset

__all__ = [
    "AnnotationRecord",
    "AttackConfig",
    "BackboneSpec",
    "CompositeMask",
    "ConvEncoder",
    "DecisionRecord",
    "Detection",
    "EpisodeSpec",
    "FusionModel",
    "InclusionRelation",
    "MpmConfig",
    "MpmModel",
    "PartInstanceMask",
    "PartVocabulary",
    "PseudoLabelConfig",
    "RawSegOutput",
    "RobustnessTable",
    "SynthSpec",
    "TrainRecipe",
    "VanillaNet",
    "adversarial_train",
    "ap50",
    "assign_part_label",
    "average_precision",
    "build_backbone",
    "build_mpm",
    "category_filter",
    "compose_mask",
    "crop_largest_parts",
    "density_histogram",
    "downsample_mask",
    "evaluate_robustness",
    "extract_instances",
    "generate_dataset",
    "generate_pseudo_record",
    "human_consistency",
    "load_checkpoint",
    "mask_iou",
    "mean_average_precision",
    "miou",
    "mpm_loss",
    "object_mask_from_parts",
    "pgd_attack",
    "project",
    "run_episodes",
    "save_checkpoint",
    "split_dataset",
    "standard_threats",
    "strip_auxiliary",
    "train_episodic",
    "validate_annotation",
    "__version__",
]
