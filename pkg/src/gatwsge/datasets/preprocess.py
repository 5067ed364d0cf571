"""Head-crop standardization, frame-rate unification and training augmentation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import EmptyBox
from ..geometry import flip_gaze_horizontal

DEFAULT_CROP_SCALE = -0.10
DEFAULT_OUT_SIZE = 64
DEFAULT_FPS = 8.0


def clip_box(head_box, frame_shape):
    H, W = frame_shape[:2]
    x, y, w, h = head_box
    x0, y0 = max(0.0, x), max(0.0, y)
    x1, y1 = min(float(W), x + w), min(float(H), y + h)
    return x0, y0, max(0.0, x1 - x0), max(0.0, y1 - y0)


def scaled_box(head_box, scale: float):
    """Scale ``(x, y, w, h)`` about its center by ``1 + scale``."""
    x, y, w, h = head_box
    f = 1.0 + scale
    nw, nh = w * f, h * f
    if nw <= 0 or nh <= 0:
        raise EmptyBox(f"scale {scale} leaves an empty box")
    cx, cy = x + w / 2.0, y + h / 2.0
    return cx - nw / 2.0, cy - nh / 2.0, nw, nh


def crop_region(frame_shape, head_box, scale=DEFAULT_CROP_SCALE, aspect=1.0):
    """Square sampling region ``(cx, cy, width, height)`` for a head box.

    The box is clipped to the frame, scaled, then padded to a square on its
    short side. ``aspect`` != 1 stretches the square (augmentation only).
    """
    if head_box is None:
        H, W = frame_shape[:2]
        head_box = (0.0, 0.0, float(W), float(H))
    box = clip_box(head_box, frame_shape)
    if box[2] <= 0 or box[3] <= 0:
        raise EmptyBox("head box lies outside the frame")
    x, y, w, h = scaled_box(box, scale)
    side = max(w, h)
    r = math.sqrt(aspect)
    return x + w / 2.0, y + h / 2.0, side * r, side / r


def resample_region(frames: np.ndarray, region, out_size: int) -> np.ndarray:
    """Bilinear resampling of ``region`` to ``out_size``; outside the frame reads 0.

    ``frames`` may be ``(H, W, C)`` or ``(T, H, W, C)``; every frame uses the same region.
    """
    single = frames.ndim == 3
    if single:
        frames = frames[None]
    T, H, W, C = frames.shape
    cx, cy, rw, rh = region
    pos = (np.arange(out_size) + 0.5) / out_size - 0.5
    xs = cx + pos * rw - 0.5
    ys = cy + pos * rh - 0.5
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = (xs - x0)[None, :, None]
    fy = (ys - y0)[:, None, None]

    def gather(yi, xi):
        valid = ((yi >= 0) & (yi < H))[:, None] & ((xi >= 0) & (xi < W))[None, :]
        vals = frames[:, np.clip(yi, 0, H - 1)][:, :, np.clip(xi, 0, W - 1)]
        return vals * valid[None, :, :, None]

    out = ((1 - fy) * (1 - fx) * gather(y0, x0) + (1 - fy) * fx * gather(y0, x0 + 1)
           + fy * (1 - fx) * gather(y0 + 1, x0) + fy * fx * gather(y0 + 1, x0 + 1))
    out = out.astype(np.float32)
    return out[0] if single else out


def head_crop_standardize(frame, head_box, scale: float = DEFAULT_CROP_SCALE,
                          out_size: int = DEFAULT_OUT_SIZE) -> np.ndarray:
    """Crop the (scaled, squared) head box and resample it to ``out_size`` x ``out_size``."""
    frame = np.asarray(frame, dtype=np.float32)
    return resample_region(frame, crop_region(frame.shape[-3:], head_box, scale), out_size)


def resample_fps(frame_times, src_fps: float, dst_fps: float = DEFAULT_FPS) -> list[int]:
    """Indices of source frames nearest to a ``dst_fps`` grid.

    ``frame_times`` is the frame count or any sequence with one entry per frame.
    """
    if not src_fps >= dst_fps > 0:
        raise ValueError(f"need src_fps >= dst_fps > 0, got {src_fps} -> {dst_fps}")
    n = frame_times if isinstance(frame_times, int) else len(frame_times)
    stride = src_fps / dst_fps
    out = []
    k = 0
    while k * stride <= n - 1 + 1e-9:
        idx = min(int(math.floor(k * stride + 0.5)), n - 1)
        out.append(idx)
        k += 1
    return out


@dataclass(frozen=True)
class AugmentParams:
    """One draw of augmentation parameters; shared by every frame of a clip."""
    scale: float = 0.0        # added to the crop scale
    aspect: float = 1.0
    brightness: float = 1.0
    contrast: float = 1.0
    saturation: float = 1.0
    flip: bool = False

    @classmethod
    def draw(cls, rng: np.random.Generator, scale_jitter=0.05, aspect_jitter=0.05, color_jitter=0.2):
        return cls(
            scale=float(rng.uniform(-scale_jitter, scale_jitter)),
            aspect=float(rng.uniform(1 - aspect_jitter, 1 + aspect_jitter)),
            brightness=float(rng.uniform(1 - color_jitter, 1 + color_jitter)),
            contrast=float(rng.uniform(1 - color_jitter, 1 + color_jitter)),
            saturation=float(rng.uniform(1 - color_jitter, 1 + color_jitter)),
            flip=bool(rng.random() < 0.5),
        )

    @property
    def is_identity(self) -> bool:
        return self == AugmentParams()


def _gray(x):
    return x[..., 0:1] * 0.299 + x[..., 1:2] * 0.587 + x[..., 2:3] * 0.114


def color_jitter(crops: np.ndarray, p: AugmentParams) -> np.ndarray:
    x = crops
    if p.brightness != 1.0:
        x = np.clip(x * p.brightness, 0.0, 1.0)
    if p.contrast != 1.0:
        mean = _gray(x).mean(axis=(-3, -2, -1), keepdims=True)
        x = np.clip((x - mean) * p.contrast + mean, 0.0, 1.0)
    if p.saturation != 1.0:
        g = _gray(x)
        x = np.clip((x - g) * p.saturation + g, 0.0, 1.0)
    return x.astype(np.float32)


def flip_label(label: np.ndarray, kind: str) -> np.ndarray:
    if kind == "gaze2d":
        out = np.array(label, dtype=np.float64, copy=True)
        out[..., 0] = -out[..., 0]
        return out
    return flip_gaze_horizontal(label)


def augment(frames: np.ndarray, head_box, label: np.ndarray, kind: str, rng: np.random.Generator | None,
            crop_scale: float = DEFAULT_CROP_SCALE, out_size: int = DEFAULT_OUT_SIZE,
            params: AugmentParams | None = None):
    """Standardized (optionally augmented) crops ``(T, S, S, 3)`` plus the adjusted label.

    Parameters come from ``params`` if given, else one draw from ``rng``; with
    neither, no augmentation is applied.
    """
    if params is None:
        params = AugmentParams.draw(rng) if rng is not None else AugmentParams()
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim == 3:
        frames = frames[None]
    region = crop_region(frames.shape[-3:], head_box, crop_scale + params.scale, params.aspect)
    crops = resample_region(frames, region, out_size)
    crops = color_jitter(crops, params)
    if params.flip:
        crops = np.ascontiguousarray(crops[:, :, ::-1])
        label = flip_label(label, kind)
    return crops, label
