"""Modality views over manifests and batch assembly."""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .manifest import SampleRecord
from .preprocess import DEFAULT_CROP_SCALE, DEFAULT_FPS, DEFAULT_OUT_SIZE, AugmentParams, augment, resample_fps
from .synth import render_synth

CLIP_LEN = 8


class ModalityView(enum.Enum):
    IMAGE = "i"
    VIDEO = "v"
    BOTH = "iv"

    @property
    def modalities(self) -> tuple[str, ...]:
        return {"i": ("image",), "v": ("video",), "iv": ("image", "video")}[self.value]


@dataclass(frozen=True)
class Item:
    """One model input: a record, the frames it uses, and the matching label rows."""
    record: SampleRecord
    frame_idx: tuple[int, ...]
    modality: str  # "image" or "video"

    @property
    def kind(self) -> str:
        return self.record.label_kind

    def label(self) -> np.ndarray:
        rec = self.record
        if rec.gaze2d is not None:
            return rec.gaze2d
        rows = rec.gaze3d if rec.gaze3d is not None else rec.pseudo3d
        return rows[list(self.frame_idx)]


def _timeline(rec: SampleRecord) -> list[int]:
    n = rec.num_frames
    if rec.fps and rec.fps > DEFAULT_FPS:
        return resample_fps(n, rec.fps, DEFAULT_FPS)
    return list(range(n))


def expand(records, modality: str, clip_len: int = CLIP_LEN, skip_degenerate: bool = False) -> list[Item]:
    """Items for one modality.

    ``image``: every frame of every record. ``video``: consecutive
    non-overlapping ``clip_len`` windows on the 8 fps timeline; a short tail
    is completed by repeating the last frame. Single-frame records have no
    video view.
    """
    items = []
    for rec in records:
        if skip_degenerate and rec.degenerate:
            continue
        times = _timeline(rec)
        if modality == "image":
            if rec.gaze2d is not None and rec.num_frames > 1:
                items.append(Item(rec, (times[0],), "image"))
                continue
            items.extend(Item(rec, (t,), "image") for t in times)
        elif modality == "video":
            if rec.num_frames == 1:
                continue
            for start in range(0, len(times), clip_len):
                chunk = times[start:start + clip_len]
                chunk = chunk + [chunk[-1]] * (clip_len - len(chunk))
                items.append(Item(rec, tuple(chunk), "video"))
        else:
            raise ValueError(f"unknown modality {modality!r}")
    return items


class FrameStore:
    """Decoded frame cache keyed by (record id, frame index)."""

    def __init__(self, workers: int = 1):
        self.workers = max(1, int(workers))
        self._cache: dict[tuple[str, int], np.ndarray] = {}
        self._synth: dict[str, np.ndarray] = {}

    def frame(self, rec: SampleRecord, i: int) -> np.ndarray:
        key = (rec.id, i)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if rec.synth is not None:
            if rec.id not in self._synth:
                self._synth[rec.id] = render_synth(rec.synth)
            arr = self._synth[rec.id][i]
        else:
            # kept as uint8 to bound memory; scaled on access
            with Image.open(rec.frame_path(i)) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        self._cache[key] = arr
        return arr

    def frames(self, item: Item) -> np.ndarray:
        out = np.stack([self.frame(item.record, i) for i in item.frame_idx])
        if out.dtype == np.uint8:
            return out.astype(np.float32) / np.float32(255.0)
        return out

    def prefetch(self, items):
        keys = {}
        for it in items:
            for i in it.frame_idx:
                keys[(it.record.id, i)] = (it.record, i)
        todo = [v for k, v in keys.items() if k not in self._cache]
        if self.workers > 1 and todo:
            with ThreadPoolExecutor(self.workers) as pool:
                list(pool.map(lambda ri: self.frame(*ri), todo))
        else:
            for rec, i in todo:
                self.frame(rec, i)


def load_batch(items, store: FrameStore, rng: np.random.Generator | None = None,
               crop_scale: float = DEFAULT_CROP_SCALE, out_size: int = DEFAULT_OUT_SIZE,
               params: list[AugmentParams] | None = None):
    """Stack items into ``(B, T, S, S, 3)`` inputs and a label array.

    With ``rng`` each item gets its own augmentation draw, in item order.
    """
    xs, ys = [], []
    for k, it in enumerate(items):
        p = params[k] if params is not None else (AugmentParams.draw(rng) if rng is not None else AugmentParams())
        crops, label = augment(store.frames(it), it.record.head_box, it.label(), it.kind, None,
                               crop_scale, out_size, params=p)
        xs.append(crops)
        ys.append(label)
    return np.stack(xs), np.stack(ys)
