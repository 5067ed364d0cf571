"""GaT: hierarchical shifted-window spatiotemporal encoder with a gaze decoder.

Token grids are ``(B, n_t, n_h, n_w, C)`` throughout. Temporal length is
halved once by the 2-frame patchifier; patch merging is spatial only, and the
decoder interpolates back to the input frame count.
"""
from __future__ import annotations

import functools
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import LengthMismatch, ShapeMismatch
from .patchify import LN_EPS, PatchEmbed, PatchSpec


@dataclass(frozen=True)
class StageConfig:
    blocks: int
    dim: int
    heads: int


@dataclass(frozen=True)
class ModelConfig:
    stages: tuple[StageConfig, ...] = (StageConfig(2, 32, 2), StageConfig(2, 64, 4))
    window: tuple[int, int, int] = (2, 4, 4)
    mlp_ratio: float = 2.0
    patch: tuple[int, int] = (4, 4)
    decoder_hidden: int | None = None

    def __post_init__(self):
        stages = tuple(s if isinstance(s, StageConfig) else StageConfig(**s) for s in self.stages)
        object.__setattr__(self, "stages", stages)
        object.__setattr__(self, "window", tuple(int(v) for v in self.window))
        object.__setattr__(self, "patch", tuple(int(v) for v in self.patch))
        if not stages:
            raise ValueError("at least one stage is required")
        for i, s in enumerate(stages):
            if s.blocks < 2:
                raise ValueError(f"stage {i}: need >= 2 blocks for a regular + shifted pair")
            if s.dim % s.heads:
                raise ValueError(f"stage {i}: heads={s.heads} must divide dim={s.dim}")
            if i and s.dim != 2 * stages[i - 1].dim:
                raise ValueError(f"stage {i}: dim must double across patch merging")
        if len(self.window) != 3 or min(self.window) < 1:
            raise ValueError("window needs three positive extents")

    @property
    def patch_spec(self) -> PatchSpec:
        return PatchSpec(t=2, h=self.patch[0], w=self.patch[1], dim=self.stages[0].dim)

    @property
    def final_dim(self) -> int:
        return self.stages[-1].dim

    @property
    def hidden(self) -> int:
        return self.decoder_hidden or 2 * self.final_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [asdict(s) for s in self.stages]
        d["window"] = list(self.window)
        d["patch"] = list(self.patch)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["stages"] = tuple(StageConfig(**s) for s in d["stages"])
        return cls(**d)


def toy_config() -> ModelConfig:
    """Tiny two-stage model used for gradient checks and fast tests."""
    return ModelConfig(stages=(StageConfig(2, 8, 2), StageConfig(2, 16, 2)),
                       window=(2, 2, 2), mlp_ratio=2.0, patch=(2, 2))


def gradcheck_config() -> ModelConfig:
    """Two-block model for finite-difference checks.

    At init the decoder's pre-normalization output is small (its norm grows
    roughly with sqrt(width)), and the loss curves on that scale. Width 64
    keeps it well above a 1e-4 difference step; narrower models make the
    check measure truncation error instead of gradient correctness.
    """
    return ModelConfig(stages=(StageConfig(2, 64, 4),), window=(2, 2, 2), mlp_ratio=2.0, patch=(2, 2))


# --------------------------------------------------------------------------- windows


def effective_window(grid, window, shift):
    """Clip the window to the grid; no shift on axes the window already covers."""
    win = tuple(min(g, w) for g, w in zip(grid, window))
    sh = tuple(0 if g <= w else s for g, w, s in zip(grid, window, shift))
    for axis, (g, w) in enumerate(zip(grid, win)):
        if g % w:
            raise ShapeMismatch(f"grid extent {g} on axis {axis} is not divisible by window {w}")
    return win, sh


def window_partition(x: torch.Tensor, window, shift=(0, 0, 0)):
    """Cyclically shift a token grid and cut it into windows.

    Returns ``(groups, mask)``: ``groups`` is ``(B * n_windows, M, C)`` in
    window order, and ``mask`` is a boolean ``(n_windows, M, M)`` marking
    token pairs that must not attend to each other (``None`` when unshifted).
    """
    B, nt, nh, nw, C = x.shape
    win, sh = effective_window((nt, nh, nw), window, shift)
    if any(sh):
        x = torch.roll(x, shifts=tuple(-s for s in sh), dims=(1, 2, 3))
    wt, wh, ww = win
    x = x.reshape(B, nt // wt, wt, nh // wh, wh, nw // ww, ww, C)
    groups = x.permute(0, 1, 3, 5, 2, 4, 6, 7).reshape(-1, wt * wh * ww, C)
    mask = shift_mask((nt, nh, nw), win, sh).to(x.device) if any(sh) else None
    return groups, mask


def window_reverse(groups: torch.Tensor, window, shift, grid, batch: int) -> torch.Tensor:
    """Inverse of :func:`window_partition`."""
    nt, nh, nw = grid
    win, sh = effective_window(grid, window, shift)
    wt, wh, ww = win
    C = groups.shape[-1]
    x = groups.reshape(batch, nt // wt, nh // wh, nw // ww, wt, wh, ww, C)
    x = x.permute(0, 1, 4, 2, 5, 3, 6, 7).reshape(batch, nt, nh, nw, C)
    if any(sh):
        x = torch.roll(x, shifts=sh, dims=(1, 2, 3))
    return x


@functools.lru_cache(maxsize=64)
def shift_mask(grid, window, shift) -> torch.Tensor:
    """Boolean ``(n_windows, M, M)``; True where tokens come from different regions."""
    labels = torch.zeros(grid, dtype=torch.long)
    count = 0
    slices = []
    for g, w, s in zip(grid, window, shift):
        if s:
            slices.append((slice(0, g - w), slice(g - w, g - s), slice(g - s, g)))
        else:
            slices.append((slice(0, g),))
    for st in slices[0]:
        for sh_ in slices[1]:
            for sw in slices[2]:
                labels[st, sh_, sw] = count
                count += 1
    wt, wh, ww = window
    nt, nh, nw = grid
    lab = labels.reshape(nt // wt, wt, nh // wh, wh, nw // ww, ww)
    lab = lab.permute(0, 2, 4, 1, 3, 5).reshape(-1, wt * wh * ww)
    return lab[:, :, None] != lab[:, None, :]


@functools.lru_cache(maxsize=64)
def relative_indices(eff_window, full_window):
    """Indices into the temporal and spatial bias tables for every token pair."""
    wt, wh, ww = eff_window
    Ft, Fh, Fw = full_window
    coords = torch.stack(torch.meshgrid(torch.arange(wt), torch.arange(wh), torch.arange(ww),
                                        indexing="ij")).reshape(3, -1)
    rel = coords[:, :, None] - coords[:, None, :]
    t_idx = rel[0] + (Ft - 1)
    s_idx = (rel[1] + (Fh - 1)) * (2 * Fw - 1) + (rel[2] + (Fw - 1))
    return t_idx, s_idx


# --------------------------------------------------------------------------- layers


class Mlp(nn.Module):
    def __init__(self, dim, hidden, out=None):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, out or dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class WindowAttention(nn.Module):
    """Multi-head self-attention inside a window with separate temporal and spatial relative biases."""

    def __init__(self, dim, heads, window):
        super().__init__()
        self.dim = dim
        self.heads = heads
        self.window = tuple(window)
        self.scale = (dim // heads) ** -0.5
        wt, wh, ww = self.window
        self.temporal_bias = nn.Parameter(torch.zeros(2 * wt - 1, heads))
        self.spatial_bias = nn.Parameter(torch.zeros((2 * wh - 1) * (2 * ww - 1), heads))
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def relative_bias(self, eff_window) -> torch.Tensor:
        t_idx, s_idx = relative_indices(tuple(eff_window), self.window)
        bias = self.temporal_bias[t_idx] + self.spatial_bias[s_idx]  # M, M, heads
        return bias.permute(2, 0, 1)

    def forward(self, groups, mask=None, eff_window=None):
        Bw, M, C = groups.shape
        eff_window = eff_window or self.window
        qkv = self.qkv(groups).reshape(Bw, M, 3, self.heads, C // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q * self.scale) @ k.transpose(-2, -1)
        attn = attn + self.relative_bias(eff_window).unsqueeze(0)
        if mask is not None:
            nW = mask.shape[0]
            attn = attn.view(Bw // nW, nW, self.heads, M, M)
            attn = attn.masked_fill(mask[None, :, None], float("-inf")).view(Bw, self.heads, M, M)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(Bw, M, C)
        return self.proj(out)


class SwinBlock3D(nn.Module):
    def __init__(self, dim, heads, window, shifted: bool, mlp_ratio=2.0):
        super().__init__()
        self.window = tuple(window)
        self.shift = tuple(w // 2 for w in window) if shifted else (0, 0, 0)
        self.norm1 = nn.LayerNorm(dim, eps=LN_EPS)
        self.attn = WindowAttention(dim, heads, window)
        self.norm2 = nn.LayerNorm(dim, eps=LN_EPS)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x):
        B, nt, nh, nw, C = x.shape
        grid = (nt, nh, nw)
        win, sh = effective_window(grid, self.window, self.shift)
        groups, mask = window_partition(self.norm1(x), self.window, self.shift)
        groups = self.attn(groups, mask, win)
        x = x + window_reverse(groups, self.window, self.shift, grid, B)
        return x + self.mlp(self.norm2(x))


class PatchMerging(nn.Module):
    """Concatenate 2x2 spatial neighbourhoods (4C), normalize, project to 2C."""

    def __init__(self, dim):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim, eps=LN_EPS)
        self.reduction = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, x):
        nh, nw = x.shape[2:4]
        if nh % 2 or nw % 2:
            raise ShapeMismatch(f"patch merging needs even spatial grid, got {nh}x{nw}")
        x0 = x[:, :, 0::2, 0::2]
        x1 = x[:, :, 1::2, 0::2]
        x2 = x[:, :, 0::2, 1::2]
        x3 = x[:, :, 1::2, 1::2]
        return self.reduction(self.norm(torch.cat([x0, x1, x2, x3], dim=-1)))


class GazeDecoder(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.mlp = Mlp(dim, hidden, 3)

    def forward(self, tokens, t_in: int):
        nt = tokens.shape[1]
        if t_in not in (1, 2 * nt) or (t_in == 1 and nt != 1):
            raise LengthMismatch(f"cannot decode {nt} temporal tokens to {t_in} frames")
        feats = tokens.mean(dim=(2, 3))  # B, n_t, C
        if t_in > 1:
            feats = F.interpolate(feats.transpose(1, 2), size=t_in, mode="linear",
                                  align_corners=False).transpose(1, 2)
        return F.normalize(self.mlp(feats), dim=-1)


class GaT(nn.Module):
    """Image/video agnostic gaze network: ``(B, T, H, W, 3) -> (B, T, 3)`` unit vectors."""

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config = config or ModelConfig()
        self.patch_embed = PatchEmbed(config.patch_spec)
        self.stages = nn.ModuleList()
        self.merges = nn.ModuleList()
        for i, s in enumerate(config.stages):
            self.stages.append(nn.ModuleList(
                SwinBlock3D(s.dim, s.heads, config.window, shifted=bool(b % 2), mlp_ratio=config.mlp_ratio)
                for b in range(s.blocks)))
            if i + 1 < len(config.stages):
                self.merges.append(PatchMerging(s.dim))
        self.norm = nn.LayerNorm(config.final_dim, eps=LN_EPS)
        self.decoder = GazeDecoder(config.final_dim, config.hidden)
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.trunc_normal_(m.weight, std=0.02, a=-0.04, b=0.04)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.LayerNorm):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
            elif isinstance(m, WindowAttention):
                nn.init.zeros_(m.temporal_bias)
                nn.init.zeros_(m.spatial_bias)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        tokens = self.patch_embed(x)
        for i, blocks in enumerate(self.stages):
            for blk in blocks:
                tokens = blk(tokens)
            if i < len(self.merges):
                tokens = self.merges[i](tokens)
        return self.norm(tokens)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encode(x), x.shape[1])


def build_model(config: ModelConfig | None = None, seed: int = 0, dtype=torch.float32) -> GaT:
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        model = GaT(config)
    finally:
        torch.random.set_rng_state(gen_state)
    return model.to(dtype)


def model_forward(x, model: GaT) -> torch.Tensor:
    """Run ``model`` on a single clip/image ``(T, H, W, 3)`` or a batch."""
    x = torch.as_tensor(x, dtype=next(model.parameters()).dtype)
    single = x.ndim == 4
    if single:
        x = x.unsqueeze(0)
    with torch.no_grad():
        out = model(x)
    return out[0] if single else out
