"""Shared 4D input representation for images and clips.

Inputs are channels-last ``(..., T, H, W, 3)`` tensors with values in [0, 1].
An image is ``T = 1`` and is duplicated to two frames before tiling, so an
image and the clip ``[I, I]`` produce identical tokens.

Tokens keep their grid: an embedded sequence is ``(B, n_t, n_h, n_w, C)``;
flattening it row-major gives the t-major, then h, then w token order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ShapeMismatch

LN_EPS = 1e-5


@dataclass(frozen=True)
class PatchSpec:
    t: int = 2
    h: int = 4
    w: int = 4
    dim: int = 32

    def __post_init__(self):
        if self.t != 2:
            raise ValueError("temporal patch extent is fixed at 2")
        if min(self.h, self.w, self.dim) < 1:
            raise ValueError("patch extents and embedding width must be >= 1")

    @property
    def patch_len(self) -> int:
        return self.t * self.h * self.w * 3


def duplicate_if_image(x):
    """Repeat a single frame to a 2-frame clip; clips pass through untouched."""
    if x.shape[-4] != 1:
        return x
    if isinstance(x, torch.Tensor):
        return torch.cat([x, x], dim=-4)
    return np.concatenate([x, x], axis=-4)


def grid_shape(T: int, H: int, W: int, spec: PatchSpec) -> tuple[int, int, int]:
    for name, size, ext in (("T", T, spec.t), ("H", H, spec.h), ("W", W, spec.w)):
        if size % ext:
            raise ShapeMismatch(f"{name}={size} is not divisible by patch extent {ext}")
    return T // spec.t, H // spec.h, W // spec.w


def patchify(x, spec: PatchSpec):
    """Tile ``(..., T, H, W, 3)`` into ``(..., N, t*h*w*3)`` non-overlapping patches.

    Patch contents are flattened frame-major, then row, column, channel.
    """
    if x.shape[-1] != 3:
        raise ShapeMismatch(f"channel dimension must be 3, got {x.shape[-1]}")
    T, H, W = x.shape[-4:-1]
    nt, nh, nw = grid_shape(T, H, W, spec)
    lead = tuple(x.shape[:-4])
    k = len(lead)
    y = x.reshape(*lead, nt, spec.t, nh, spec.h, nw, spec.w, 3)
    order = tuple(range(k)) + tuple(k + i for i in (0, 2, 4, 1, 3, 5, 6))
    if isinstance(y, torch.Tensor):
        y = y.permute(*order)
    else:
        y = np.transpose(y, order)
    return y.reshape(*lead, nt * nh * nw, spec.patch_len)


def unpatchify(patches, grid: tuple[int, int, int], spec: PatchSpec):
    """Exact inverse of :func:`patchify`."""
    nt, nh, nw = grid
    if patches.shape[-2:] != (nt * nh * nw, spec.patch_len):
        raise ShapeMismatch(f"patch array {tuple(patches.shape)} does not match grid {grid}")
    lead = tuple(patches.shape[:-2])
    k = len(lead)
    y = patches.reshape(*lead, nt, nh, nw, spec.t, spec.h, spec.w, 3)
    order = tuple(range(k)) + tuple(k + i for i in (0, 3, 1, 4, 2, 5, 6))
    if isinstance(y, torch.Tensor):
        y = y.permute(*order)
    else:
        y = np.transpose(y, order)
    return y.reshape(*lead, nt * spec.t, nh * spec.h, nw * spec.w, 3)


def embed_tokens(patches: torch.Tensor, weight, bias, gain, shift, eps: float = LN_EPS) -> torch.Tensor:
    """Per-token affine map followed by layer normalization.

    ``weight`` is ``(C, patch_len)`` (torch's linear layout).
    """
    if patches.shape[-1] != weight.shape[1]:
        raise ShapeMismatch(f"patch length {patches.shape[-1]} != weight input width {weight.shape[1]}")
    z = F.linear(patches, weight, bias)
    return F.layer_norm(z, (weight.shape[0],), gain, shift, eps)


class PatchEmbed(nn.Module):
    """Patchifier: duplicate images, tile, project, normalize."""

    def __init__(self, spec: PatchSpec):
        super().__init__()
        self.spec = spec
        self.proj = nn.Linear(spec.patch_len, spec.dim)
        self.norm = nn.LayerNorm(spec.dim, eps=LN_EPS)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 5:
            raise ShapeMismatch(f"expected (B, T, H, W, 3) input, got {tuple(x.shape)}")
        x = duplicate_if_image(x)
        T, H, W = x.shape[1:4]
        grid = grid_shape(T, H, W, self.spec)
        tokens = embed_tokens(patchify(x, self.spec), self.proj.weight, self.proj.bias,
                              self.norm.weight, self.norm.bias, self.norm.eps)
        return tokens.reshape(x.shape[0], *grid, self.spec.dim)
