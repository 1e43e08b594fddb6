"""Model-versus-human decision consistency.

Error consistency is Cohen's kappa over binary correctness: how much the two
observers' mistakes coincide beyond what their accuracies already predict by
independence. Statistics are averaged over condition groups by default, so a
condition with few samples counts as much as a large one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import IdMismatch


@dataclass(frozen=True)
class DecisionRecord:
    sample_id: str
    decision: int
    correct: bool
    condition: str | None = None

    @classmethod
    def from_truth(
        cls, sample_id: str, decision: int, truth: int, condition: str | None = None
    ) -> "DecisionRecord":
        return cls(sample_id, decision, decision == truth, condition)


@dataclass(frozen=True)
class ConsistencyResult:
    accuracy_difference: float
    observed_consistency: float
    error_consistency: float
    label_agreement: float
    per_condition: dict[str, dict[str, float]]

    def to_dict(self) -> dict:
        return {
            "accuracy_difference": self.accuracy_difference,
            "observed_consistency": self.observed_consistency,
            "error_consistency": self.error_consistency,
            "label_agreement": self.label_agreement,
            "per_condition": {k: dict(v) for k, v in self.per_condition.items()},
        }


def _kappa(c_obs: float, acc_m: float, acc_h: float) -> float:
    c_exp = acc_m * acc_h + (1.0 - acc_m) * (1.0 - acc_h)
    if abs(1.0 - c_exp) < 1e-12:
        return 0.0
    return (c_obs - c_exp) / (1.0 - c_exp)


def _group_stats(model, human) -> dict[str, float]:
    m_correct = np.array([r.correct for r in model], dtype=float)
    h_correct = np.array([r.correct for r in human], dtype=float)
    acc_m = float(m_correct.mean())
    acc_h = float(h_correct.mean())
    c_obs = float((m_correct == h_correct).mean())
    agree = float(
        np.mean([a.decision == b.decision for a, b in zip(model, human)])
    )
    return {
        "model_accuracy": acc_m,
        "human_accuracy": acc_h,
        "accuracy_difference": abs(acc_m - acc_h),
        "observed_consistency": c_obs,
        "error_consistency": _kappa(c_obs, acc_m, acc_h),
        "label_agreement": agree,
        "samples": float(len(model)),
    }


def human_consistency(
    model: list[DecisionRecord],
    human: list[DecisionRecord],
    by_condition: bool = True,
) -> ConsistencyResult:
    """Accuracy gap, observed consistency, and error consistency (kappa)."""
    model_ids = [r.sample_id for r in model]
    human_ids = [r.sample_id for r in human]
    if len(set(model_ids)) != len(model_ids):
        raise IdMismatch("duplicate sample ids in model records")
    if sorted(model_ids) != sorted(set(human_ids)) or len(human_ids) != len(model_ids):
        raise IdMismatch("model and human records cover different samples")
    if not model:
        raise IdMismatch("no records supplied")

    by_id = {r.sample_id: r for r in human}
    paired = [(m, by_id[m.sample_id]) for m in sorted(model, key=lambda r: r.sample_id)]

    groups: dict[str, list[tuple[DecisionRecord, DecisionRecord]]] = {}
    for m, h in paired:
        key = (m.condition if m.condition is not None else "all") if by_condition else "all"
        groups.setdefault(key, []).append((m, h))

    per_condition = {
        key: _group_stats([m for m, _ in pairs], [h for _, h in pairs])
        for key, pairs in sorted(groups.items())
    }
    stats = list(per_condition.values())
    return ConsistencyResult(
        accuracy_difference=float(np.mean([s["accuracy_difference"] for s in stats])),
        observed_consistency=float(np.mean([s["observed_consistency"] for s in stats])),
        error_consistency=float(np.mean([s["error_consistency"] for s in stats])),
        label_agreement=float(np.mean([s["label_agreement"] for s in stats])),
        per_condition=per_condition,
    )
