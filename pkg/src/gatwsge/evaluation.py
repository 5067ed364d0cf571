"""Angular-error evaluation with per-split aggregation and CSV reports.

Video clips are scored on their 4th output (index 3 of 8); images on their
single output. Splits follow the camera-axis angle of the ground truth.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .datasets.manifest import manifest_hash
from .datasets.preprocess import DEFAULT_CROP_SCALE, DEFAULT_OUT_SIZE
from .datasets.views import FrameStore, Item, expand, load_batch
from .errors import ManifestMismatch, ValidationError
from .geometry import SPLIT_ORDER, angular_error_deg, normalize3, split_masks

VIDEO_SCORE_INDEX = 3
CSV_HEADER = ["split", "modality", "count", "mean_error_deg"]


@dataclass
class SplitStat:
    count: int
    mean_error_deg: float


@dataclass
class EvalReport:
    modality: str
    splits: dict[str, SplitStat]
    manifest_hash: str = ""
    meta: dict = field(default_factory=dict)

    def error(self, split: str = "Full") -> float:
        return self.splits[split].mean_error_deg

    def rows(self):
        for name, st in self.splits.items():
            yield [name, self.modality, st.count, st.mean_error_deg]

    def to_json(self) -> dict:
        return {"modality": self.modality, "manifest_hash": self.manifest_hash, "meta": self.meta,
                "splits": {k: {"count": v.count, "mean_error_deg": v.mean_error_deg}
                           for k, v in self.splits.items()}}

    @classmethod
    def from_json(cls, d: dict) -> "EvalReport":
        return cls(d["modality"], {k: SplitStat(int(v["count"]), float(v["mean_error_deg"]))
                                   for k, v in d["splits"].items()},
                   d.get("manifest_hash", ""), d.get("meta", {}))


def aggregate(errors: np.ndarray, gts: np.ndarray, modality: str, mhash: str = "", meta=None) -> EvalReport:
    """Per-split mean of ``errors`` (one per sample) split by ground truth ``gts``."""
    errors = np.asarray(errors, dtype=np.float64).reshape(-1)
    splits = {}
    if len(errors):
        masks = split_masks(gts)
    for tag in SPLIT_ORDER:
        sel = errors[masks[tag]] if len(errors) else errors
        # fsum keeps the mean independent of sample order
        mean = math.fsum(sel.tolist()) / len(sel) if len(sel) else float("nan")
        splits[tag.value] = SplitStat(int(len(sel)), mean)
    return EvalReport(modality, splits, mhash, dict(meta or {}))


def predict(model, items: list[Item], store: FrameStore, crop_scale=DEFAULT_CROP_SCALE,
            out_size=DEFAULT_OUT_SIZE, batch_size: int = 64) -> np.ndarray:
    """Model outputs ``(n, T, 3)`` for items of a single modality (no augmentation)."""
    dtype = next(model.parameters()).dtype
    outs = []
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            for s in range(0, len(items), batch_size):
                x, _ = load_batch(items[s:s + batch_size], store, None, crop_scale, out_size)
                outs.append(model(torch.from_numpy(x).to(dtype)).double().numpy())
    finally:
        model.train(was_training)
    if not outs:
        return np.zeros((0, 1, 3))
    return np.concatenate(outs)


def scored_output(outputs: np.ndarray, modality: str) -> np.ndarray:
    return outputs[:, VIDEO_SCORE_INDEX] if modality == "video" else outputs[:, 0]


def evaluate(model, records, modality: str = "image", store: FrameStore | None = None,
             crop_scale=DEFAULT_CROP_SCALE, out_size=DEFAULT_OUT_SIZE, batch_size: int = 64,
             meta=None) -> EvalReport:
    for rec in records:
        if rec.gaze3d is None:
            raise ValidationError(f"record {rec.id!r} has no 3D ground truth", field="gaze3d")
    store = store or FrameStore()
    items = expand(records, modality)
    outputs = predict(model, items, store, crop_scale, out_size, batch_size)
    pred = scored_output(outputs, modality) if len(items) else np.zeros((0, 3))
    gts = np.array([scored_output(it.label()[None], modality)[0] for it in items]).reshape(-1, 3)
    errors = angular_error_deg(normalize3(pred), gts) if len(items) else np.zeros(0)
    info = {"crop_scale": crop_scale, "out_size": out_size, **(meta or {})}
    return aggregate(errors, gts, modality, manifest_hash(records), info)


def constant_predictor_error(gts) -> float:
    """Mean angular error of the best constant guess: the normalized mean direction."""
    gts = np.atleast_2d(np.asarray(gts, dtype=np.float64))
    direction = normalize3(gts.mean(axis=0))
    return float(np.mean(angular_error_deg(np.broadcast_to(direction, gts.shape), gts)))


def scored_ground_truth(records, modality: str) -> np.ndarray:
    items = expand(records, modality)
    return np.array([scored_output(it.label()[None], modality)[0] for it in items]).reshape(-1, 3)


def crop_scale_sweep(model, records, scales, modality: str = "image", store: FrameStore | None = None,
                     out_size=DEFAULT_OUT_SIZE, batch_size: int = 64) -> list[tuple[float, EvalReport]]:
    store = store or FrameStore()
    return [(float(s), evaluate(model, records, modality, store, s, out_size, batch_size))
            for s in scales]


def compare_runs(a: EvalReport, b: EvalReport) -> list[dict]:
    """Per-split change from ``a`` to ``b`` (negative delta = ``b`` is better)."""
    if a.manifest_hash != b.manifest_hash:
        raise ManifestMismatch("reports were computed on different manifests")
    rows = []
    for split in a.splits:
        if split not in b.splits:
            continue
        ea, eb = a.error(split), b.error(split)
        delta = eb - ea
        rel = 100.0 * delta / ea if ea else (0.0 if delta == 0 else float("inf"))
        rows.append({"split": split, "modality": a.modality, "a": ea, "b": eb,
                     "delta_deg": delta, "relative_pct": rel})
    return rows


def write_reports_csv(path, reports, extra_cols: dict | None = None) -> Path:
    """CSV (``split,modality,count,mean_error_deg``) plus a JSON sidecar with metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for rep in reports:
            for row in rep.rows():
                w.writerow(row[:3] + [repr(float(row[3]))])
    sidecar = {"reports": [r.to_json() for r in reports], **(extra_cols or {})}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def read_reports(path) -> list[EvalReport]:
    """Load reports back from a CSV's JSON sidecar."""
    data = json.loads(Path(str(path) + ".json").read_text())
    return [EvalReport.from_json(d) for d in data["reports"]]


def write_sweep_csv(path, sweep) -> Path:
    """One row per crop scale with the per-split errors side by side."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    splits = [t.value for t in SPLIT_ORDER]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scale", "modality", "count"] + [f"{s}_deg" for s in splits])
        for scale, rep in sweep:
            w.writerow([repr(float(scale)), rep.modality, rep.splits["Full"].count]
                       + [repr(float(rep.error(s))) for s in splits])
    return path


def pseudo_label_error(records, oracle: dict) -> float:
    """Mean angle between pseudo labels and the sealed hidden gaze (offline diagnostics only)."""
    errs = [angular_error_deg(r.pseudo3d[0], oracle[r.id]) for r in records
            if r.pseudo3d is not None and not r.degenerate and r.id in oracle]
    return float(np.mean(errs)) if errs else float("nan")
