"""Angular losses in degrees."""
from __future__ import annotations

import math

import torch

from .errors import LengthMismatch

XY_EPS = 1e-6
DEGENERATE_PENALTY = 90.0
RAD2DEG = 180.0 / math.pi


def gaze_loss(pred: torch.Tensor, gt: torch.Tensor, weights=None) -> torch.Tensor:
    """Temporally weighted angular error, averaged over the batch.

    ``pred`` and ``gt`` are ``(..., T, 3)``; ``weights`` has length ``T``,
    is non-negative and sums to one (default uniform).
    """
    if pred.shape != gt.shape:
        raise LengthMismatch(f"prediction {tuple(pred.shape)} vs target {tuple(gt.shape)}")
    T = pred.shape[-2]
    if weights is None:
        weights = torch.full((T,), 1.0 / T, dtype=pred.dtype)
    else:
        weights = torch.as_tensor(weights, dtype=pred.dtype)
        if weights.shape != (T,):
            raise LengthMismatch(f"{weights.shape[0] if weights.ndim else 0} weights for {T} frames")
        if bool((weights < 0).any()) or abs(float(weights.sum()) - 1.0) > 1e-6:
            raise ValueError("weights must be non-negative and sum to 1")
    # atan2 form of arccos(cos): exact at 0 and 180 degrees, finite gradients without clamping
    cross = torch.linalg.cross(pred, gt.to(pred.dtype), dim=-1).norm(dim=-1)
    ang = torch.atan2(cross, (pred * gt).sum(-1)) * RAD2DEG
    per_sample = (ang * weights).sum(-1)
    return per_sample.mean()


def ws_loss_2d(pred: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Planar angle between the prediction's (x, y) and a 2D gaze label, in degrees.

    ``pred`` is ``(B, 3)`` or ``(B, T, 3)``; ``v`` is ``(B, 2)`` and applies to
    every frame. Predictions with ``|(x, y)| <= XY_EPS`` cost a flat 90 degrees.
    """
    v = v.to(pred.dtype)
    if pred.ndim == 3:
        v = v[:, None, :].expand(-1, pred.shape[1], -1)
    if pred.shape[:-1] != v.shape[:-1]:
        raise LengthMismatch(f"prediction {tuple(pred.shape)} vs 2D target {tuple(v.shape)}")
    p = pred[..., :2]
    degenerate = p.norm(dim=-1) <= XY_EPS
    p = torch.where(degenerate[..., None], torch.ones_like(p), p)
    cross = p[..., 0] * v[..., 1] - p[..., 1] * v[..., 0]
    dot = (p * v).sum(-1)
    ang = torch.atan2(cross.abs(), dot) * RAD2DEG
    ang = torch.where(degenerate, torch.full_like(ang, DEGENERATE_PENALTY), ang)
    return ang.mean()
