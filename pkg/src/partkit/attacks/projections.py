"""Norm-ball projections for perturbations.

A tensor with more than one dimension is treated as a batch with one
constraint per row (dim 0); a vector is one sample. Already-feasible input is
returned unchanged, with feasibility read as ||d|| <= eps * (1 + 1e-6) so
that projecting twice is exactly idempotent despite rounding.
"""

from __future__ import annotations

import torch

from ..errors import SpecError

NORMS = ("linf", "l1", "l2")
_SLACK = 1.0 + 1e-6


def _l1_ball(flat: torch.Tensor, epsilon: float) -> torch.Tensor:
    """Euclidean projection of each row onto the l1 ball (sort-based)."""
    norms = flat.abs().sum(dim=1)
    needs = norms > epsilon * _SLACK
    if not needs.any():
        return flat
    out = flat.clone()
    rows = flat[needs].abs()
    sorted_rows, _ = torch.sort(rows, dim=1, descending=True)
    cumulative = sorted_rows.cumsum(dim=1)
    positions = torch.arange(
        1, rows.shape[1] + 1, dtype=flat.dtype, device=flat.device
    )
    candidate = (cumulative - epsilon) / positions
    rho = (sorted_rows > candidate).sum(dim=1)
    theta = candidate.gather(1, (rho - 1).unsqueeze(1)).squeeze(1)
    shrunk = torch.clamp(rows - theta.unsqueeze(1), min=0.0)
    out[needs] = torch.sign(flat[needs]) * shrunk
    return out


def project(delta: torch.Tensor, norm: str, epsilon: float) -> torch.Tensor:
    """Map delta to the nearest point of the epsilon ball of the given norm."""
    if norm not in NORMS:
        raise SpecError(f"norm must be one of {NORMS}, got {norm!r}")
    if epsilon < 0:
        raise SpecError(f"epsilon must be >= 0, got {epsilon}")
    if norm == "linf":
        if delta.abs().max() <= epsilon * _SLACK:
            return delta
        return delta.clamp(-epsilon, epsilon)

    squeeze = delta.ndim == 1
    flat = delta.reshape(1, -1) if squeeze else delta.reshape(delta.shape[0], -1)

    if norm == "l2":
        norms = flat.norm(dim=1)
        if (norms <= epsilon * _SLACK).all():
            return delta
        scale = torch.where(
            norms > epsilon * _SLACK,
            epsilon / norms.clamp_min(1e-12),
            torch.ones_like(norms),
        )
        flat = flat * scale.unsqueeze(1)
    else:
        if (flat.abs().sum(dim=1) <= epsilon * _SLACK).all():
            return delta
        flat = _l1_ball(flat, epsilon)
    return flat.reshape(delta.shape)
