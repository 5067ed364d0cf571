"""Command-line entry point: ``gatwsge <command> [flags]``.

Exit codes: 0 ok, 1 configuration error, 2 I/O error, 3 numeric divergence
(or a failed gradient check). Every file a command writes lands under --out.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .datasets import (CROSS_DOMAIN, PRESETS, FrameStore, ModalityView, load_manifest, synth_generate_2d,
                       synth_generate_3d, write_manifest)
from .datasets.preprocess import DEFAULT_CROP_SCALE, DEFAULT_OUT_SIZE
from .datasets.views import CLIP_LEN
from .errors import (CheckpointError, ConfigError, GazeError, ManifestMismatch, ParseError,
                     TrainingDivergence, ValidationError)
from .evaluation import crop_scale_sweep, evaluate, write_reports_csv, write_sweep_csv
from .gradcheck import grad_check
from .model import ModelConfig, gradcheck_config, toy_config
from .schedule import OptimizerConfig
from .training import (ABLATION_ROWS, DatasetSpec, SupervisionMode, generate_pseudo_labels, run_ablation,
                       run_st_wsge, train_stage)

log = logging.getLogger("gatwsge")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
SYNTH_PRESETS = {"default": PRESETS, "cross": CROSS_DOMAIN}
MODEL_PRESETS = {"default": ModelConfig, "toy": toy_config, "gradcheck": gradcheck_config}
# keys a --config file may set, on top of every flag's dest name
EXTRA_CONFIG_KEYS = {"model_config", "optimizer"}


# --------------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not argparse's exit 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _add_common(p: argparse.ArgumentParser, seed_required: bool = True):
    # required-ness is checked after --config is merged, so a file may supply these
    p.add_argument("--out", help="output directory; every file written goes here (required)")
    p.add_argument("--seed", type=int, help="random seed" + (" (required)" if seed_required else ""))
    p.set_defaults(seed_required=seed_required)
    p.add_argument("--config", help="JSON file of defaults keyed by flag name (flags override it)")
    p.add_argument("--workers", type=int, default=1,
                   help="frame-loading threads (default 1; GAT_DETERMINISTIC=1 forces 1)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _add_data(p: argparse.ArgumentParser):
    p.add_argument("--crop-scale", type=float, default=DEFAULT_CROP_SCALE,
                   help="head-box scale before cropping (default %(default)s)")
    p.add_argument("--size", type=int, default=DEFAULT_OUT_SIZE, help="crop side in pixels (default %(default)s)")
    p.add_argument("--clip-len", type=int, default=CLIP_LEN, help="frames per video clip (default %(default)s)")
    p.add_argument("--view", action="append", default=None, metavar="[NAME=]{i,v,iv}",
                   help="modality view: a bare value sets the default for all datasets, NAME=VIEW sets "
                        "one dataset by manifest stem (repeatable; default iv)")


def _add_training(p: argparse.ArgumentParser):
    p.add_argument("--manifest-3d", action="append", default=None, metavar="PATH",
                   help="3D-labelled training manifest (repeatable)")
    p.add_argument("--manifest-val", help="3D-labelled validation manifest for early stopping")
    p.add_argument("--manifest-test", help="3D-labelled test manifest; adds test reports")
    p.add_argument("--model", choices=sorted(MODEL_PRESETS), default="default", help="architecture preset")
    p.add_argument("--epochs", type=int, default=60, help="maximum epochs and cosine horizon (default %(default)s)")
    p.add_argument("--min-epochs", type=int, default=20, help="no early stop before this (default %(default)s)")
    p.add_argument("--patience", type=int, default=10, help="early-stopping patience (default %(default)s)")
    p.add_argument("--batch", type=int, default=32, help="batch size (default %(default)s)")
    p.add_argument("--lr", type=float, default=1e-4,
                   help="peak learning rate; warmup starts at lr/5 (default %(default)s)")
    p.add_argument("--no-augment", action="store_true", help="disable training augmentation")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gatwsge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="render synthetic 3D/2D datasets")
    _add_common(p)
    p.add_argument("--count", type=int, default=200, help="3D train clips and 2D images (default %(default)s)")
    p.add_argument("--clip-len", type=int, default=CLIP_LEN, help="frames per 3D clip (default %(default)s)")
    p.add_argument("--val-count", type=int, default=None, help="validation images (default count/4)")
    p.add_argument("--test-count", type=int, default=None, help="test images (default count/2)")
    p.add_argument("--preset", choices=sorted(SYNTH_PRESETS), default="default",
                   help="domain presets; 'cross' narrows the 3D gaze range")

    p = sub.add_parser("train", help="train one network")
    _add_common(p)
    _add_data(p)
    _add_training(p)
    p.add_argument("--mode", choices=[m.value for m in SupervisionMode], default="supervised",
                   help="supervision mode (default %(default)s)")
    p.add_argument("--manifest-2d", help="2D-labelled manifest (ws mode)")
    p.add_argument("--manifest-pseudo", help="pseudo-3D manifest (st / stwsge modes)")

    p = sub.add_parser("pseudolabel", help="turn 2D labels into pseudo-3D labels with a trained model")
    _add_common(p, seed_required=False)
    _add_data(p)
    p.add_argument("--checkpoint", required=True, help="trained model")
    p.add_argument("--manifest-2d", required=True, help="2D-labelled manifest")
    p.add_argument("--kind", choices=["3dgp", "3dpred"], default="3dgp",
                   help="3dgp: rotate predictions onto the 2D label; 3dpred: raw predictions")

    p = sub.add_parser("selftrain", help="stage 1, pseudo-labelling, stage 2")
    _add_common(p)
    _add_data(p)
    _add_training(p)
    p.add_argument("--mode", choices=["stwsge", "st"], default="stwsge", help="stage-2 mode (default %(default)s)")
    p.add_argument("--manifest-2d", required=True, help="2D-labelled manifest")
    p.add_argument("--warm-start", action="store_true", help="initialize stage 2 from stage 1")

    p = sub.add_parser("ablate", help="supervised, ws, st and stwsge on one test set")
    _add_common(p)
    _add_data(p)
    _add_training(p)
    p.add_argument("--manifest-2d", required=True, help="2D-labelled manifest")

    p = sub.add_parser("eval", help="per-split angular error of a checkpoint")
    _add_common(p, seed_required=False)
    _add_data(p)
    p.add_argument("--checkpoint", required=True, help="trained model")
    p.add_argument("--manifest-test", required=True, help="3D-labelled manifest")

    p = sub.add_parser("sweep", help="evaluate a checkpoint at several crop scales")
    _add_common(p, seed_required=False)
    _add_data(p)
    p.add_argument("--checkpoint", required=True, help="trained model")
    p.add_argument("--manifest-test", required=True, help="3D-labelled manifest")
    p.add_argument("--scales", default="-0.1,0,0.3", help="comma-separated crop scales (default %(default)s)")

    p = sub.add_parser("gradcheck", help="finite-difference check of model gradients")
    _add_common(p)
    p.add_argument("--loss", choices=["gaze", "ws"], default="gaze", help="loss to differentiate")
    p.add_argument("--coords", type=int, default=200, help="parameter coordinates to probe (default %(default)s)")
    p.add_argument("--step", type=float, default=1e-4, help="difference step (default %(default)s)")
    p.add_argument("--model", choices=sorted(MODEL_PRESETS), default="gradcheck", help="architecture preset")
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    """Parse flags, using values from --config as defaults."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"--config: no such file {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--config: invalid JSON ({exc})") from None
        if not isinstance(cfg, dict):
            raise ConfigError("--config must hold a JSON object")
        known = set(vars(args)) | EXTRA_CONFIG_KEYS
        unknown = sorted(set(k.replace("-", "_") for k in cfg) - known)
        if unknown:
            raise ConfigError(f"--config: unknown keys {unknown}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
        args = parser.parse_args(argv)
    if not args.out:
        raise ConfigError("--out is required")
    if args.seed_required and args.seed is None:
        raise ConfigError(f"{args.command}: --seed is required")
    if os.environ.get("GAT_DETERMINISTIC") == "1":
        args.workers = 1
    return args


# --------------------------------------------------------------------------- helpers


def _require_file(path, flag: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{flag}: no such file {path}")
    return p


def _load(path, flag: str):
    return load_manifest(_require_file(path, flag))


def _views(args) -> tuple[ModalityView, dict[str, ModalityView]]:
    default, named = ModalityView.BOTH, {}
    for spec in args.view or []:
        name, _, value = spec.rpartition("=")
        try:
            view = ModalityView(value)
        except ValueError:
            raise ConfigError(f"--view: expected i, v or iv, got {value!r}") from None
        if name:
            named[name] = view
        else:
            default = view
    return default, named


def _dataset(path, flag: str, args) -> DatasetSpec:
    default, named = _views(args)
    p = _require_file(path, flag)
    return DatasetSpec(p.stem, load_manifest(p), named.get(p.stem, default))


def _model_config(args) -> ModelConfig:
    if getattr(args, "model_config", None):
        try:
            return ModelConfig.from_dict(args.model_config)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"model_config: {exc}") from None
    return MODEL_PRESETS[args.model]()


def _optimizer(args) -> OptimizerConfig:
    extra = dict(getattr(args, "optimizer", None) or {})
    try:
        return OptimizerConfig(**{"base_lr": args.lr, "warmup_start_lr": args.lr / 5, "max_epochs": args.epochs,
                                  "min_epochs": args.min_epochs, "patience": args.patience,
                                  "batch_size": args.batch, "seed": args.seed, **extra})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"optimizer: {exc}") from None


def _train_kw(args) -> dict:
    return {"crop_scale": args.crop_scale, "out_size": args.size, "augment": not args.no_augment,
            "clip_len": args.clip_len}


def _test_modalities(args, records=None) -> tuple[str, ...]:
    """Requested test modalities, minus video when no test record is a clip."""
    default, named = _views(args)
    mods = default.modalities
    if args.manifest_test:
        mods = named.get(Path(args.manifest_test).stem, default).modalities
    if records is not None and not any(r.num_frames > 1 for r in records):
        mods = tuple(m for m in mods if m != "video") or ("image",)
    return mods


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _train_sets(args) -> list[DatasetSpec]:
    if not args.manifest_3d:
        raise ConfigError("at least one --manifest-3d is required")
    return [_dataset(p, "--manifest-3d", args) for p in args.manifest_3d]


# --------------------------------------------------------------------------- commands


def cmd_synth(args, out: Path) -> int:
    if args.count < 0:
        raise ConfigError("--count must be >= 0")
    presets = SYNTH_PRESETS[args.preset]
    n_val = args.count // 4 if args.val_count is None else args.val_count
    n_test = args.count // 2 if args.test_count is None else args.test_count
    # disjoint seed streams per split
    synth_generate_3d(args.count, presets["3d"], args.seed * 4 + 0, out, "train3d", clip_len=args.clip_len)
    synth_generate_3d(n_val, presets["3d"], args.seed * 4 + 1, out, "val3d", clip_len=1)
    synth_generate_3d(n_test, presets["test"], args.seed * 4 + 2, out, "test3d", clip_len=1)
    synth_generate_2d(args.count, presets["2d"], args.seed * 4 + 3, out, "train2d")
    _write_json(out / "synth_config.json", {"preset": args.preset, "seed": args.seed, "count": args.count,
                                            "clip_len": args.clip_len, "val_count": n_val, "test_count": n_test,
                                            "domains": {k: v.to_dict() for k, v in presets.items()}})
    print(f"wrote train3d, val3d, test3d, train2d manifests to {out}")
    return EXIT_OK


def _report_test(model, args, store, name: str, out: Path):
    if not args.manifest_test:
        return None
    test = _load(args.manifest_test, "--manifest-test")
    reps = [evaluate(model, test, m, store, args.crop_scale, args.size) for m in _test_modalities(args, test)]
    write_reports_csv(out / f"{name}.csv", reps)
    return reps


def cmd_train(args, out: Path) -> int:
    mode = SupervisionMode(args.mode)
    sets = _train_sets(args)
    if args.manifest_2d:
        sets.append(_dataset(args.manifest_2d, "--manifest-2d", args))
    if args.manifest_pseudo:
        sets.append(_dataset(args.manifest_pseudo, "--manifest-pseudo", args))
    if mode is SupervisionMode.WS and not args.manifest_2d:
        raise ConfigError("--mode ws requires --manifest-2d")
    if mode.pseudo_kind and not args.manifest_pseudo:
        raise ConfigError(f"--mode {mode.value} requires --manifest-pseudo")
    val = _load(args.manifest_val, "--manifest-val") if args.manifest_val else []
    store = FrameStore(args.workers)
    state = train_stage(sets, val, mode, _optimizer(args), _model_config(args), store=store, **_train_kw(args))
    save_checkpoint(out / "model.ckpt", state.model, state.meta())
    _write_json(out / "history.json", state.history)
    reps = _report_test(state.model, args, store, "test", out)
    msg = f"best epoch {state.best_epoch}, val error {state.best_validation_error:.3f} deg"
    if reps:
        msg += ", test " + ", ".join(f"{r.modality} {r.error():.3f}" for r in reps)
    print(msg)
    return EXIT_OK


def cmd_pseudolabel(args, out: Path) -> int:
    model, _ = load_checkpoint(_require_file(args.checkpoint, "--checkpoint"))
    records = _load(args.manifest_2d, "--manifest-2d")
    pseudo = generate_pseudo_labels(model, records, args.kind, FrameStore(args.workers), args.crop_scale,
                                    args.size, args.clip_len)
    write_manifest(out / "pseudo.jsonl", pseudo)
    print(f"{len(pseudo)} pseudo labels ({sum(r.degenerate for r in pseudo)} degenerate)")
    return EXIT_OK


def cmd_selftrain(args, out: Path) -> int:
    sets = _train_sets(args)
    val = _load(args.manifest_val, "--manifest-val") if args.manifest_val else []
    records_2d = _load(args.manifest_2d, "--manifest-2d")
    test = _load(args.manifest_test, "--manifest-test") if args.manifest_test else None
    default, named = _views(args)
    view_2d = named.get(Path(args.manifest_2d).stem, default)
    cfg = _optimizer(args)
    store = FrameStore(args.workers)
    res = run_st_wsge(sets, val, records_2d, cfg, cfg, _model_config(args), test_records=test,
                      test_modalities=_test_modalities(args, test), view_2d=view_2d,
                      kind=SupervisionMode(args.mode).pseudo_kind, warm_start=args.warm_start, store=store,
                      **_train_kw(args))
    save_checkpoint(out / "stage1.ckpt", res.stage1.model, res.stage1.meta())
    save_checkpoint(out / "stage2.ckpt", res.stage2.model, res.stage2.meta())
    write_manifest(out / "pseudo.jsonl", res.pseudo)
    _write_json(out / "report.json", res.report)
    if test:
        rows = []
        for modality in _test_modalities(args, test):
            a = res.report["stage1"]["test"][modality]["splits"]
            b = res.report["stage2"]["test"][modality]["splits"]
            for split in a:
                ea, eb = a[split]["mean_error_deg"], b[split]["mean_error_deg"]
                rows.append([split, modality, a[split]["count"], repr(ea), repr(eb), repr(eb - ea)])
        with open(out / "comparison.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["split", "modality", "count", "stage1_deg", "stage2_deg", "delta_deg"])
            w.writerows(rows)
        full = [r for r in rows if r[0] == "Full"]
        for r in full:
            print(f"{r[1]}: stage1 {float(r[3]):.3f} deg -> stage2 {float(r[4]):.3f} deg")
    return EXIT_OK


def cmd_ablate(args, out: Path) -> int:
    if not args.manifest_test:
        raise ConfigError("ablate requires --manifest-test")
    sets = _train_sets(args)
    val = _load(args.manifest_val, "--manifest-val") if args.manifest_val else []
    records_2d = _load(args.manifest_2d, "--manifest-2d")
    test = _load(args.manifest_test, "--manifest-test")
    default, named = _views(args)
    cfg = _optimizer(args)
    states, reports = run_ablation(sets, val, records_2d, cfg, cfg, test, _model_config(args),
                                   test_modalities=_test_modalities(args, test),
                                   view_2d=named.get(Path(args.manifest_2d).stem, default),
                                   store=FrameStore(args.workers), **_train_kw(args))
    write_ablation(out / "ablation.csv", reports)
    _write_json(out / "ablation.json", {
        "modes": {name: {"meta": states[name].meta(), "test": {m: r.to_json() for m, r in reports[name].items()}}
                  for name in states},
        "model_config": _model_config(args).to_dict()})
    for name in (m.value for m in ABLATION_ROWS):
        print(name.ljust(11) + "  ".join(f"{m} {r.error():.3f}" for m, r in reports[name].items()))
    return EXIT_OK


def write_ablation(path: Path, reports: dict) -> Path:
    """One row per (mode, modality, split), with the change relative to supervised."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "split", "modality", "count", "mean_error_deg", "delta_vs_supervised_deg"])
        for mode in (m.value for m in ABLATION_ROWS):
            for modality, rep in reports[mode].items():
                base = reports["supervised"][modality]
                for split, st in rep.splits.items():
                    delta = st.mean_error_deg - base.splits[split].mean_error_deg
                    w.writerow([mode, split, modality, st.count, repr(st.mean_error_deg), repr(delta)])
    return path


def cmd_eval(args, out: Path) -> int:
    model, _ = load_checkpoint(_require_file(args.checkpoint, "--checkpoint"))
    test = _load(args.manifest_test, "--manifest-test")
    store = FrameStore(args.workers)
    reps = [evaluate(model, test, m, store, args.crop_scale, args.size) for m in _test_modalities(args, test)]
    write_reports_csv(out / "eval.csv", reps)
    for r in reps:
        print(f"{r.modality}: " + ", ".join(f"{k} {v.mean_error_deg:.3f} (n={v.count})" for k, v in r.splits.items()))
    return EXIT_OK


def cmd_sweep(args, out: Path) -> int:
    try:
        scales = [float(s) for s in args.scales.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--scales: expected comma-separated numbers, got {args.scales!r}") from None
    if not scales:
        raise ConfigError("--scales is empty")
    model, _ = load_checkpoint(_require_file(args.checkpoint, "--checkpoint"))
    test = _load(args.manifest_test, "--manifest-test")
    modality = _test_modalities(args, test)[0]
    sweep = crop_scale_sweep(model, test, scales, modality, FrameStore(args.workers), args.size)
    write_sweep_csv(out / "sweep.csv", sweep)
    for s, r in sweep:
        print(f"scale {s:+.2f}: Full {r.error():.3f} deg")
    return EXIT_OK


def cmd_gradcheck(args, out: Path) -> int:
    res = grad_check(MODEL_PRESETS[args.model](), args.loss, step=args.step, n_coords=args.coords, seed=args.seed)
    line = res.summary()
    (out / "gradcheck.txt").write_text(line + "\n")
    print(line)
    return EXIT_OK if res.passed else EXIT_NUMERIC


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "pseudolabel": cmd_pseudolabel, "selftrain": cmd_selftrain,
            "ablate": cmd_ablate, "eval": cmd_eval, "sweep": cmd_sweep, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, out)
    except TrainingDivergence as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ParseError, ValidationError, ManifestMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except GazeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
