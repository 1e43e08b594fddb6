"""Deterministic figure rendering for report files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .errors import SchemaError

_DPI = 110
_METADATA = {"Software": "partkit"}


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise SchemaError(message)


def _save(fig, out_path: str | Path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=_DPI, metadata=_METADATA)
    plt.close(fig)
    return out_path


def plot_lambda_curve(report: dict, out_path: str | Path) -> Path:
    """Clean and robust accuracy against the segmentation loss weight.

    Expects ``points`` entries with ``lam``, ``clean`` and ``robust`` keys,
    each accuracy in [0, 1].
    """
    _require(isinstance(report, dict) and bool(report), "empty report")
    points = report.get("points")
    _require(isinstance(points, list) and bool(points), "report has no points")
    for point in points:
        _require(
            isinstance(point, dict) and {"lam", "clean", "robust"} <= set(point),
            f"point {point!r} needs lam, clean and robust",
        )
    points = sorted(points, key=lambda p: p["lam"])
    lams = [p["lam"] for p in points]

    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for key, style in (("clean", "o-"), ("robust", "s--")):
        ax.plot(lams, [100 * p[key] for p in points], style, label=key)
    ax.set_xlabel("segmentation loss weight")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    ax.legend(loc="lower right")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _save(fig, out_path)


def plot_robustness_bars(report: dict, out_path: str | Path) -> Path:
    """Accuracy bars per threat, clean first, with the attacked mean marked."""
    _require(isinstance(report, dict) and bool(report), "empty report")
    accuracies = report.get("accuracies")
    _require(isinstance(accuracies, dict) and bool(accuracies), "report has no accuracies")
    _require("average" in report, "report has no average")

    names = ["clean"] if "clean" in accuracies else []
    names += sorted(k for k in accuracies if k != "clean")
    values = [100 * accuracies[name] for name in names]

    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.bar(range(len(names)), values, color="#4878cf")
    ax.axhline(100 * report["average"], color="#333333", linestyle=":",
               label="attacked mean")
    ax.set_xticks(range(len(names)), names, rotation=20)
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    ax.legend(loc="upper right")
    fig.tight_layout()
    return _save(fig, out_path)


_KINDS = {
    "lambda-sweep": plot_lambda_curve,
    "robustness": plot_robustness_bars,
}


def render_report(report: dict, out_path: str | Path, kind: str | None = None) -> Path:
    """Dispatch on the report's ``kind`` field (or an explicit override)."""
    _require(isinstance(report, dict) and bool(report), "empty report")
    kind = kind or report.get("kind")
    _require(kind in _KINDS, f"unknown plot kind {kind!r}; expected one of {sorted(_KINDS)}")
    return _KINDS[kind](report, out_path)
