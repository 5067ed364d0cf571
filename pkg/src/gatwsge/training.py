"""Supervision modes, the training loop, pseudo-labelling and the two-stage driver."""
from __future__ import annotations

import copy
import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
import torch

from .datasets.manifest import SampleRecord
from .datasets.preprocess import DEFAULT_CROP_SCALE, DEFAULT_OUT_SIZE
from .datasets.sampler import balanced_epoch_plan
from .datasets.views import CLIP_LEN, FrameStore, Item, ModalityView, expand, load_batch
from .errors import ConfigError, TrainingDivergence
from .evaluation import EvalReport, evaluate, predict, scored_output
from .geometry import normalize3, pseudo_label_3d
from .losses import gaze_loss, ws_loss_2d
from .model import GaT, ModelConfig, build_model
from .schedule import OptimizerConfig, lr_at

log = logging.getLogger(__name__)


class SupervisionMode(enum.Enum):
    SUPERVISED = "supervised"
    WS = "ws"        # 2D labels supervise the planar part of the prediction
    ST = "st"        # raw stage-1 predictions as labels
    STWSGE = "stwsge"  # stage-1 predictions rotated onto the 2D labels

    @property
    def pseudo_kind(self) -> str | None:
        return {"st": "3dpred", "stwsge": "3dgp"}.get(self.value)


@dataclass
class DatasetSpec:
    tag: str
    records: list[SampleRecord]
    view: ModalityView = ModalityView.BOTH

    def label_kinds(self) -> set[str]:
        return {r.label_kind for r in self.records}


@dataclass
class TrainState:
    model: GaT
    mode: SupervisionMode
    optimizer: OptimizerConfig
    epoch: int = 0
    best_epoch: int = -1
    best_validation_error: float = math.inf
    epochs_since_best: int = 0
    history: list[dict] = field(default_factory=list)

    def meta(self) -> dict:
        return {"mode": self.mode.value, "optimizer": self.optimizer.to_dict(), "epoch": self.epoch,
                "best_epoch": self.best_epoch, "best_validation_error": self.best_validation_error,
                "epochs_since_best": self.epochs_since_best, "seed": self.optimizer.seed}


def check_mode(mode: SupervisionMode, datasets: list[DatasetSpec]):
    kinds: dict[str, set] = {}
    for d in datasets:
        ks = d.label_kinds()
        if len(ks) > 1:
            raise ConfigError(f"dataset {d.tag!r} mixes label types {sorted(ks)}")
        for k in ks:
            kinds.setdefault(k, set()).add(d.tag)
    pseudo_kinds = {r.pseudo_kind for d in datasets for r in d.records if r.pseudo3d is not None}
    if "gaze3d" not in kinds:
        raise ConfigError("at least one 3D-labelled dataset is required")
    if mode is SupervisionMode.SUPERVISED and (set(kinds) - {"gaze3d"}):
        raise ConfigError("supervised mode takes 3D-labelled datasets only")
    if mode is SupervisionMode.WS:
        if "gaze2d" not in kinds:
            raise ConfigError("ws mode needs a 2D-labelled dataset (--manifest-2d)")
        if "pseudo3d" in kinds:
            raise ConfigError("ws mode does not take pseudo-labelled data")
    if mode.pseudo_kind:
        if "pseudo3d" not in kinds or mode.pseudo_kind not in pseudo_kinds:
            raise ConfigError(f"{mode.value} mode needs a pseudo-labelled dataset of kind "
                              f"{mode.pseudo_kind!r} (--manifest-pseudo)")
        if pseudo_kinds - {mode.pseudo_kind}:
            raise ConfigError(f"{mode.value} mode got pseudo labels of kind {sorted(pseudo_kinds)}")
        if "gaze2d" in kinds:
            raise ConfigError(f"{mode.value} mode takes pseudo labels, not raw 2D labels")


def build_groups(datasets: list[DatasetSpec], clip_len: int = CLIP_LEN) -> list[tuple[str, list[Item]]]:
    """One training group per (dataset, modality); a BOTH view yields two groups."""
    groups = []
    for d in datasets:
        for modality in d.view.modalities:
            items = expand(d.records, modality, clip_len, skip_degenerate=True)
            if items:
                groups.append((f"{d.tag}:{modality[0].upper()}", items))
    return groups


def _batch_loss(pred: torch.Tensor, target: np.ndarray, kind: str) -> torch.Tensor:
    y = torch.from_numpy(np.asarray(target)).to(pred.dtype)
    if kind == "gaze2d":
        return ws_loss_2d(pred, y)
    return gaze_loss(pred, y)


def _finite_params(model) -> bool:
    return all(bool(torch.isfinite(p).all()) for p in model.parameters())


def train_stage(datasets: list[DatasetSpec], val_records, mode: SupervisionMode, cfg: OptimizerConfig,
                model_config: ModelConfig | None = None, *, crop_scale: float = DEFAULT_CROP_SCALE,
                out_size: int = DEFAULT_OUT_SIZE, augment: bool = True, val_modality: str = "image",
                store: FrameStore | None = None, init_model: GaT | None = None,
                clip_len: int = CLIP_LEN, callback=None) -> TrainState:
    """Train one network with balanced single-dataset batches and early stopping.

    Returns the state holding the parameters with the lowest validation error.
    """
    mode = SupervisionMode(mode)
    check_mode(mode, datasets)
    groups = build_groups(datasets, clip_len)
    if not groups:
        raise ConfigError("no training items after expanding the dataset views")
    store = store or FrameStore()
    for _, items in groups:
        store.prefetch(items)
    kind_of = {tag: items[0].kind for tag, items in groups}

    torch.manual_seed(cfg.seed)
    if init_model is not None:
        model = copy.deepcopy(init_model)
    else:
        model = build_model(model_config, seed=cfg.seed)
    model.train()
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.warmup_start_lr, betas=cfg.betas,
                            weight_decay=cfg.weight_decay)
    state = TrainState(model=model, mode=mode, optimizer=cfg)
    best_params = copy.deepcopy(model.state_dict())
    sizes = [(tag, len(items)) for tag, items in groups]

    for epoch in range(cfg.max_epochs):
        plan = balanced_epoch_plan(sizes, cfg.batch_size, cfg.seed, epoch)
        aug_rng = np.random.default_rng([cfg.seed, epoch, 1]) if augment else None
        lookup = dict(groups)
        total, count = 0.0, 0
        for step, batch in enumerate(plan):
            lr = lr_at(epoch + step / len(plan), cfg)
            for g in opt.param_groups:
                g["lr"] = lr
            items = [lookup[batch.tag][i] for i in batch.indices]
            x, y = load_batch(items, store, aug_rng, crop_scale, out_size)
            pred = model(torch.from_numpy(x))
            loss = _batch_loss(pred, y, kind_of[batch.tag])
            if not torch.isfinite(loss):
                raise TrainingDivergence(f"non-finite loss at epoch {epoch} step {step}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += loss.item() * len(items)
            count += len(items)
        if not _finite_params(model):
            raise TrainingDivergence(f"non-finite parameters after epoch {epoch}")

        val_err = math.nan
        if val_records:
            val_err = evaluate(model, val_records, val_modality, store, crop_scale, out_size).error("Full")
            if not math.isfinite(val_err):
                raise TrainingDivergence(f"non-finite validation error at epoch {epoch}")
        state.epoch = epoch
        entry = {"epoch": epoch, "train_loss": total / max(count, 1), "val_error": val_err,
                 "lr": lr_at(epoch + 1, cfg), "mode": mode.value, "seed": cfg.seed}
        state.history.append(entry)
        if not val_records or val_err < state.best_validation_error:
            state.best_validation_error = val_err if val_records else math.inf
            state.best_epoch = epoch
            state.epochs_since_best = 0
            best_params = copy.deepcopy(model.state_dict())
        else:
            state.epochs_since_best += 1
        log.info("epoch %d mode=%s train=%.3f val=%.3f", epoch, mode.value, entry["train_loss"], val_err)
        if callback is not None:
            callback(entry)
        if epoch + 1 >= cfg.min_epochs and state.epochs_since_best >= cfg.patience:
            break

    model.load_state_dict(best_params)
    model.eval()
    return state


def generate_pseudo_labels(model: GaT, records_2d, kind: str = "3dgp", store: FrameStore | None = None,
                           crop_scale: float = DEFAULT_CROP_SCALE, out_size: int = DEFAULT_OUT_SIZE,
                           clip_len: int = CLIP_LEN) -> list[SampleRecord]:
    """Turn 2D-labelled records into pseudo-3D records using ``model``'s predictions.

    ``3dgp`` rotates each prediction about the z-axis onto the 2D label;
    ``3dpred`` keeps the raw prediction. Images use their only output; clips
    use the 4th output of their first 8-frame window. Output is sorted by id.
    """
    if kind not in ("3dgp", "3dpred"):
        raise ValueError(f"unknown pseudo-label kind {kind!r}")
    store = store or FrameStore()
    records = sorted(records_2d, key=lambda r: r.id)
    image_items, video_items = [], []
    for rec in records:
        if rec.gaze2d is None:
            raise ConfigError(f"record {rec.id!r} has no 2D label")
        if rec.num_frames == 1:
            image_items.append(Item(rec, (0,), "image"))
        else:
            idx = tuple(min(i, rec.num_frames - 1) for i in range(clip_len))
            video_items.append(Item(rec, idx, "video"))
    preds = {}
    for modality, items in (("image", image_items), ("video", video_items)):
        if items:
            out = scored_output(predict(model, items, store, crop_scale, out_size), modality)
            for it, g in zip(items, out):
                preds[it.record.id] = normalize3(g)
    result = []
    for rec in records:
        g_hat = preds[rec.id]
        if kind == "3dgp":
            vec, degenerate = pseudo_label_3d(g_hat, rec.gaze2d)
        else:
            vec, degenerate = g_hat, False
        result.append(replace(rec, gaze2d=None, pseudo3d=np.tile(vec, (rec.num_frames, 1)),
                              degenerate=bool(degenerate), pseudo_kind=kind))
    return result


def _test_reports(model, test_records, modalities, store, crop_scale, out_size) -> dict[str, EvalReport]:
    return {m: evaluate(model, test_records, m, store, crop_scale, out_size) for m in modalities}


class SelfTrainResult(NamedTuple):
    stage1: TrainState
    stage2: TrainState
    report: dict
    pseudo: list[SampleRecord]


def run_st_wsge(train3d: list[DatasetSpec], val_records, records_2d, cfg_stage1: OptimizerConfig,
                cfg_stage2: OptimizerConfig, model_config: ModelConfig | None = None, *,
                test_records=None, test_modalities=("image",), view_2d: ModalityView = ModalityView.IMAGE,
                kind: str = "3dgp", warm_start: bool = False, store: FrameStore | None = None,
                stage1: TrainState | None = None, **train_kw) -> SelfTrainResult:
    """Supervised stage 1, pseudo-labelling, then stage 2 on 3D + pseudo-3D data.

    Also returns the pseudo-labelled records. With no 2D records the
    second stage reduces to a supervised retrain.
    """
    store = store or FrameStore()
    crop_scale = train_kw.get("crop_scale", DEFAULT_CROP_SCALE)
    out_size = train_kw.get("out_size", DEFAULT_OUT_SIZE)
    if stage1 is None:
        stage1 = train_stage(train3d, val_records, SupervisionMode.SUPERVISED, cfg_stage1, model_config,
                             store=store, **train_kw)
    pseudo = generate_pseudo_labels(stage1.model, records_2d, kind, store, crop_scale, out_size)
    mode2 = SupervisionMode.STWSGE if kind == "3dgp" else SupervisionMode.ST
    stage2_sets = list(train3d)
    if pseudo:
        stage2_sets.append(DatasetSpec("pseudo", pseudo, view_2d))
    else:
        mode2 = SupervisionMode.SUPERVISED
    stage2 = train_stage(stage2_sets, val_records, mode2, cfg_stage2, model_config, store=store,
                         init_model=stage1.model if warm_start else None, **train_kw)
    report = {
        "stage1": {**stage1.meta(), "history": stage1.history},
        "stage2": {**stage2.meta(), "history": stage2.history, "warm_start": warm_start},
        "pseudo": {"kind": kind, "count": len(pseudo), "degenerate": sum(r.degenerate for r in pseudo)},
        "model_config": (model_config or stage1.model.config).to_dict(),
    }
    if test_records:
        for name, st in (("stage1", stage1), ("stage2", stage2)):
            reps = _test_reports(st.model, test_records, test_modalities, store, crop_scale, out_size)
            report[name]["test"] = {m: r.to_json() for m, r in reps.items()}
    return SelfTrainResult(stage1, stage2, report, pseudo)


ABLATION_ROWS = (SupervisionMode.SUPERVISED, SupervisionMode.WS, SupervisionMode.ST, SupervisionMode.STWSGE)


def run_ablation(train3d: list[DatasetSpec], val_records, records_2d, cfg_stage1: OptimizerConfig,
                 cfg_stage2: OptimizerConfig, test_records, model_config: ModelConfig | None = None, *,
                 test_modalities=("image",), view_2d: ModalityView = ModalityView.IMAGE,
                 store: FrameStore | None = None, **train_kw):
    """The four ways of using 2D labels, evaluated on one test set.

    Returns ``(states, reports)`` keyed by mode value; ST and ST-WSGE share
    the supervised stage-1 network.
    """
    store = store or FrameStore()
    crop_scale = train_kw.get("crop_scale", DEFAULT_CROP_SCALE)
    out_size = train_kw.get("out_size", DEFAULT_OUT_SIZE)
    states = {}
    states["supervised"] = train_stage(train3d, val_records, SupervisionMode.SUPERVISED, cfg_stage1,
                                       model_config, store=store, **train_kw)
    states["ws"] = train_stage(train3d + [DatasetSpec("gf2d", list(records_2d), view_2d)], val_records,
                               SupervisionMode.WS, cfg_stage2, model_config, store=store, **train_kw)
    for kind, name in (("3dpred", "st"), ("3dgp", "stwsge")):
        states[name] = run_st_wsge(train3d, val_records, records_2d, cfg_stage1, cfg_stage2, model_config,
                                   view_2d=view_2d, kind=kind, store=store, stage1=states["supervised"],
                                   **train_kw).stage2
    reports = {name: _test_reports(st.model, test_records, test_modalities, store, crop_scale, out_size)
               for name, st in states.items()}
    return states, reports
