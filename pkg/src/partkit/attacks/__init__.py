"""Attacks, norm projections, adversarial training, robustness evaluation."""

from .evaluate import (
    RobustnessTable,
    attacked_accuracy,
    balanced_subset,
    clean_accuracy,
    evaluate_robustness,
    standard_threats,
)
from .pgd import AttackConfig, pgd_attack
from .projections import project
from .training import EmaTracker, TrainRecipe, adversarial_train

__all__ = [
    "AttackConfig",
    "EmaTracker",
    "RobustnessTable",
    "TrainRecipe",
    "adversarial_train",
    "attacked_accuracy",
    "balanced_subset",
    "clean_accuracy",
    "evaluate_robustness",
    "pgd_attack",
    "project",
    "standard_threats",
]
