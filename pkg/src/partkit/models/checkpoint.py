"""Versioned checkpoints carrying both weights and builder specs."""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import torch

from ..errors import SchemaError
from .backbone import BackboneSpec, VanillaNet, build_backbone
from .mpm import MpmConfig, MpmModel, build_mpm

CHECKPOINT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    model: MpmModel | VanillaNet,
    ema_state: dict | None = None,
    extra: dict | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(model, MpmModel):
        kind = "mpm"
        spec = model.backbone.spec
        cfg = asdict(model.cfg)
    else:
        kind = "vanilla"
        spec = model.spec
        cfg = None
    payload = {
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "backbone_spec": asdict(spec),
        "mpm_config": cfg,
        "state_dict": model.state_dict(),
        "ema_state_dict": ema_state,
        "extra": extra or {},
    }
    torch.save(payload, path)
    return path


def load_checkpoint(
    path: str | Path, use_ema: bool = False
) -> tuple[MpmModel | VanillaNet, dict]:
    """Rebuild the saved model; returns (model, payload)."""
    payload = torch.load(Path(path), weights_only=False)
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise SchemaError(
            f"checkpoint version {version} unsupported, expected {CHECKPOINT_VERSION}"
        )
    spec = BackboneSpec(**payload["backbone_spec"])
    if payload["kind"] == "mpm":
        model = build_mpm(spec, MpmConfig(**payload["mpm_config"]))
    elif payload["kind"] == "vanilla":
        model = build_backbone(spec)
    else:
        raise SchemaError(f"unknown checkpoint kind {payload['kind']!r}")
    state = payload["ema_state_dict"] if use_ema else payload["state_dict"]
    if use_ema and state is None:
        raise SchemaError("checkpoint holds no EMA weights")
    model.load_state_dict(state)
    model.eval()
    return model, payload
