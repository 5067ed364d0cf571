"""JSON-lines manifests.

One object per line::

    {"id": "...", "dataset": "...",
     "frames": ["a.png", ...]  |  "synth": {...},
     "gaze3d": [[x, y, z], ...]  |  "gaze2d": [dx, dy]  |
     "pseudo3d": {"vecs": [[x, y, z], ...], "degenerate": false, "kind": "3dgp"},
     "head_box": [x, y, w, h], "fps": 8}

``gaze2d`` is the raw gaze-following annotation: target pixel minus gaze
origin (head-box center), in pixel axes. It is converted to an eye-coordinate
unit vector at load time. Frame paths are relative to the manifest file.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DegenerateVector, ParseError, ValidationError
from ..geometry import gaze2d_to_offset, normalize3, offset_to_gaze2d

LABEL_FIELDS = ("gaze3d", "gaze2d", "pseudo3d")
PSEUDO_KINDS = ("3dgp", "3dpred")


@dataclass
class SampleRecord:
    id: str
    dataset: str
    frames: list[str] | None = None
    synth: dict | None = None
    gaze3d: np.ndarray | None = None   # (T, 3) unit rows
    gaze2d: np.ndarray | None = None   # (2,) unit, eye coordinates
    pseudo3d: np.ndarray | None = None  # (T, 3) unit rows
    degenerate: bool = False
    pseudo_kind: str | None = None
    head_box: tuple[float, float, float, float] | None = None
    fps: float | None = None
    root: Path | None = field(default=None, repr=False, compare=False)

    @property
    def num_frames(self) -> int:
        if self.frames is not None:
            return len(self.frames)
        return len(self.synth["gazes"])

    @property
    def label_kind(self) -> str:
        for name in LABEL_FIELDS:
            if getattr(self, name) is not None:
                return name
        raise ValidationError("record has no label", field="gaze3d")

    def frame_path(self, i: int) -> Path:
        p = Path(self.frames[i])
        return p if p.is_absolute() or self.root is None else self.root / p

    def to_json(self, root: Path | None = None) -> dict:
        """Serializable dict; frame paths are made relative to ``root`` when given."""
        out: dict = {"id": self.id, "dataset": self.dataset}
        if self.frames is not None:
            if root is not None and self.root is not None and Path(root).resolve() != self.root.resolve():
                out["frames"] = [os.path.relpath(self.frame_path(i).resolve(), Path(root).resolve())
                                 for i in range(len(self.frames))]
            else:
                out["frames"] = list(self.frames)
        else:
            out["synth"] = self.synth
        if self.gaze3d is not None:
            out["gaze3d"] = self.gaze3d.tolist()
        if self.gaze2d is not None:
            out["gaze2d"] = gaze2d_to_offset(self.gaze2d).tolist()
        if self.pseudo3d is not None:
            out["pseudo3d"] = {"vecs": self.pseudo3d.tolist(), "degenerate": bool(self.degenerate),
                               "kind": self.pseudo_kind or "3dgp"}
        if self.head_box is not None:
            out["head_box"] = [float(v) for v in self.head_box]
        if self.fps is not None:
            out["fps"] = self.fps
        return out


def _unit_rows(raw, name, line) -> np.ndarray:
    try:
        arr = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"not numeric: {exc}", field=name, line=line) from None
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValidationError(f"expected a list of [x, y, z] rows, got shape {arr.shape}", field=name, line=line)
    try:
        return normalize3(arr)
    except DegenerateVector as exc:
        raise ValidationError(str(exc), field=name, line=line) from None


def parse_record(obj: dict, line: int | None = None, root: Path | None = None) -> SampleRecord:
    if not isinstance(obj, dict):
        raise ParseError("record must be a JSON object", line)
    for key in ("id", "dataset"):
        if not isinstance(obj.get(key), str) or not obj[key]:
            raise ValidationError("missing or empty string", field=key, line=line)
    if ("frames" in obj) == ("synth" in obj):
        raise ValidationError("exactly one of 'frames' or 'synth' is required", field="frames", line=line)
    labels = [k for k in LABEL_FIELDS if k in obj]
    if len(labels) != 1:
        raise ValidationError(f"exactly one label field required, got {labels}", field="gaze3d", line=line)

    frames = synth = None
    if "frames" in obj:
        frames = obj["frames"]
        if not isinstance(frames, list) or not frames or not all(isinstance(f, str) for f in frames):
            raise ValidationError("must be a non-empty list of paths", field="frames", line=line)
        T = len(frames)
    else:
        synth = obj["synth"]
        if not isinstance(synth, dict) or not synth.get("gazes"):
            raise ValidationError("inline synth spec needs a 'gazes' list", field="synth", line=line)
        T = len(synth["gazes"])

    rec = SampleRecord(id=obj["id"], dataset=obj["dataset"], frames=frames, synth=synth, root=root)
    kind = labels[0]
    if kind == "gaze3d":
        rec.gaze3d = _unit_rows(obj["gaze3d"], "gaze3d", line)
        if len(rec.gaze3d) != T:
            raise ValidationError(f"{len(rec.gaze3d)} gaze rows for {T} frames", field="gaze3d", line=line)
    elif kind == "gaze2d":
        raw = np.asarray(obj["gaze2d"], dtype=np.float64)
        if raw.shape != (2,):
            raise ValidationError("expected [dx, dy]", field="gaze2d", line=line)
        try:
            rec.gaze2d = offset_to_gaze2d(raw)
        except DegenerateVector as exc:
            raise ValidationError(str(exc), field="gaze2d", line=line) from None
    else:
        ps = obj["pseudo3d"]
        if not isinstance(ps, dict) or "vecs" not in ps:
            raise ValidationError("expected {'vecs': [...], 'degenerate': bool}", field="pseudo3d", line=line)
        rec.pseudo3d = _unit_rows(ps["vecs"], "pseudo3d", line)
        if len(rec.pseudo3d) != T:
            raise ValidationError(f"{len(rec.pseudo3d)} gaze rows for {T} frames", field="pseudo3d", line=line)
        rec.degenerate = bool(ps.get("degenerate", False))
        rec.pseudo_kind = ps.get("kind", "3dgp")
        if rec.pseudo_kind not in PSEUDO_KINDS:
            raise ValidationError(f"unknown kind {rec.pseudo_kind!r}", field="pseudo3d", line=line)

    if obj.get("head_box") is not None:
        box = obj["head_box"]
        if not isinstance(box, list) or len(box) != 4:
            raise ValidationError("expected [x, y, w, h]", field="head_box", line=line)
        rec.head_box = tuple(float(v) for v in box)
    if obj.get("fps") is not None:
        rec.fps = float(obj["fps"])
        if rec.fps <= 0:
            raise ValidationError("must be positive", field="fps", line=line)
    return rec


def load_manifest(path) -> list[SampleRecord]:
    path = Path(path)
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(exc.msg, lineno) from None
            rec = parse_record(obj, lineno, path.parent)
            if rec.id in seen:
                raise ValidationError(f"duplicate id {rec.id!r}", field="id", line=lineno)
            seen.add(rec.id)
            records.append(rec)
    return records


def dump_record(rec: SampleRecord, root: Path | None = None) -> str:
    return json.dumps(rec.to_json(root), sort_keys=True, separators=(",", ":"))


def write_manifest(path, records) -> Path:
    """Write ``records`` as JSON lines; frame paths are rebased onto the manifest's directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dump_record(rec, path.parent) + "\n")
    return path


def manifest_hash(records) -> str:
    """Content hash over the canonical serialization of ``records``."""
    h = hashlib.sha256()
    for rec in records:
        h.update(dump_record(rec).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def write_oracle(path, ids, gazes) -> Path:
    """Sealed side channel: hidden 3D gaze for 2D-labelled samples."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for sid, g in zip(ids, gazes):
            fh.write(json.dumps({"id": sid, "gaze3d": np.asarray(g).tolist()}, sort_keys=True) + "\n")
    return path


def read_oracle(path) -> dict[str, np.ndarray]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out[obj["id"]] = normalize3(obj["gaze3d"])
    return out
