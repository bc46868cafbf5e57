"""Command-line entry point: synth, analyze, preprocess, train, eval, predict.

Exit codes: 0 success, 1 I/O failure, 2 invalid input (a JSON error object
is written to stderr), 64 unknown subcommand.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, derive_seed
from .evalkit import SingleClassError, evaluate
from .ieeg_io import ClipFormatError, Label, ManifestError, load_manifest, read_clip
from .pipeline import analyze_dataset, clip_to_tensors, label_counts, load_segment_set, preprocess_dataset
from .predictor import (
    RULES,
    ModelFormatError,
    TrainingError,
    load_model,
    predict_clip,
    predict_clips,
    save_model,
    train,
)
from .signal_core import PipelineConfig
from .spectro import StftConfig, TensorCache
from .synthgen import generate

log = logging.getLogger("ieegpredict")

EXIT_OK = 0
EXIT_IO = 1
EXIT_INVALID = 2
EXIT_USAGE = 64

COMMANDS = ("synth", "analyze", "preprocess", "train", "eval", "predict")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser, data: bool = True):
    p.add_argument("--config", type=Path, help="run configuration JSON")
    p.add_argument("--seed", type=int, help="master seed for every stochastic stage")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--no-timestamp", action="store_true", help="omit generation time from reports")
    p.add_argument("-v", "--verbose", action="store_true")
    if data:
        p.add_argument("--data", type=Path, required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ieegpredict", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic iEEG dataset")
    _common(p, data=False)

    p = sub.add_parser("analyze", help="exploratory statistics per patient")
    _common(p)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--max-clips", type=int, default=4, help="clips pooled per class")
    p.add_argument("--z-threshold", type=float, default=6.0)
    p.add_argument("--csv", action="store_true", help="also write correlation matrices as CSV")

    p = sub.add_parser("preprocess", help="decimate, segment and STFT every clip into a tensor cache")
    _common(p)
    p.add_argument("--factor", type=int, choices=(2, 4))

    p = sub.add_parser("train", help="train the multi-scale CNN on a tensor cache")
    _common(p)

    p = sub.add_parser("eval", help="sensitivity and AUC on the test split of a tensor cache")
    _common(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--rule", choices=RULES, default="max")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--split", choices=("train", "test"), default="test")

    p = sub.add_parser("predict", help="clip probabilities for the clips of a manifest or clip files")
    _common(p, data=False)
    p.add_argument("--data", type=Path, required=True, nargs="+", help="manifest JSON or clip files")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--rule", choices=RULES, default="max")
    p.add_argument("--split", choices=("train", "test"))
    return parser


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        cfg.seed = args.seed
    return cfg


def _stamp(doc: dict, args) -> dict:
    if not args.no_timestamp:
        doc["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return doc


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{what} not found: {path}")
    return path


# -- subcommands ---------------------------------------------------------------------


def cmd_synth(args, cfg: RunConfig) -> None:
    synth = dataclasses.replace(cfg.synth, rng_seed=derive_seed(cfg.seed, "synth"))
    manifest = generate(synth, args.out)
    _write_json(args.out / "synth_report.json", _stamp({
        "command": "synth",
        "seed": cfg.seed,
        "synth": dataclasses.asdict(cfg.synth),
        "counts": manifest.counts(),
    }, args))


def cmd_analyze(args, cfg: RunConfig) -> None:
    manifest = load_manifest(_require(args.data, "manifest"))
    if args.max_clips < 1 or args.z_threshold <= 0:
        raise ConfigError("--max-clips must be >= 1 and --z-threshold > 0")
    reports = analyze_dataset(manifest, args.split, args.max_clips, args.z_threshold)
    for pid, report in reports.items():
        report["command"] = "analyze"
        _write_json(args.out / f"analysis_{pid}.json", _stamp(report, args))
        if args.csv:
            for cls, stats in report["classes"].items():
                np.savetxt(args.out / f"correlation_{pid}_{cls}.csv",
                           np.asarray(stats["correlation"]), delimiter=",", fmt="%.10g")


def cmd_preprocess(args, cfg: RunConfig) -> None:
    if args.factor is not None:
        cfg.override("pipeline", decimation_factor=args.factor)
    manifest = load_manifest(_require(args.data, "manifest"))
    cache, report = preprocess_dataset(manifest, cfg.pipeline, cfg.stft, args.out)
    report["command"] = "preprocess"
    _write_json(args.out / "preprocess_report.json", _stamp(report, args))


def cmd_train(args, cfg: RunConfig) -> None:
    cache = TensorCache.open(_require(args.data, "tensor cache"))
    data = load_segment_set(cache, "train")
    tcfg = dataclasses.replace(cfg.train, rng_seed=derive_seed(cfg.seed, "train"))
    model, history = train(data, tcfg, cfg.architecture)
    extra = {"pipeline": cache.meta.get("pipeline"), "stft": cache.meta.get("stft")}
    save_model(model, args.out / "model.json", extra)
    with open(args.out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_auc"])
        for row in history:
            w.writerow([row.epoch, repr(float(row.train_loss)), "" if row.val_auc is None else repr(float(row.val_auc))])
    _write_json(args.out / "train_report.json", _stamp({
        "command": "train",
        "seed": cfg.seed,
        "train": dataclasses.asdict(tcfg),
        "architecture": cfg.to_dict()["architecture"],
        "class_weight_pos": model.class_weight,
        "counts": label_counts(data.labels),
        "best_epoch": model.meta["best_epoch"],
        "best_val_auc": model.meta["best_val_auc"],
        "epochs_run": len(history) - 1,
    }, args))


def cmd_eval(args, cfg: RunConfig) -> None:
    cache = TensorCache.open(_require(args.data, "tensor cache"))
    model = load_model(_require(args.model, "model"))
    if not 0 <= args.threshold <= 1:
        raise ConfigError("--threshold must lie in [0, 1]")
    data = load_segment_set(cache, args.split)
    preds = predict_clips(model, data, args.rule)
    per_patient: dict[str, list] = {}
    for p in preds:
        per_patient.setdefault(p.patient_id, []).append((p.clip_prob, int(p.label)))
    report = evaluate(per_patient, args.threshold)
    doc = report.to_json()
    doc.update({"command": "eval", "rule": args.rule, "split": args.split, "n_clips": len(preds)})
    _write_json(args.out / "eval.json", _stamp(doc, args))
    with open(args.out / "roc.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "fpr", "tpr", "threshold"])
        for m in report.per_patient:
            for fpr, tpr, thr in zip(m.roc.fpr, m.roc.tpr, m.roc.thresholds):
                w.writerow([m.patient_id, repr(float(fpr)), repr(float(tpr)), repr(float(thr))])
    with open(args.out / "clip_predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "clip_id", "clip_prob", "label"])
        for p in preds:
            w.writerow([p.patient_id, p.clip_id, repr(p.clip_prob), int(p.label)])


def _model_pipeline(model) -> tuple[PipelineConfig, StftConfig]:
    try:
        return PipelineConfig(**model.meta["pipeline"]), StftConfig(**model.meta["stft"])
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"model lacks preprocessing metadata: {exc}") from None


def cmd_predict(args, cfg: RunConfig) -> None:
    model = load_model(_require(args.model, "model"))
    pipeline, stft = _model_pipeline(model)
    clips = []
    for path in args.data:
        _require(path, "input")
        if path.suffix == ".json":
            for patient in load_manifest(path).patients:
                clips.extend((e.path, patient.patient_id) for e in patient.entries(args.split))
        else:
            clips.append((path, ""))
    with open(args.out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["clip_id", "clip_prob", "label_if_known"])
        for path, pid in clips:
            clip = read_clip(path, patient_id=pid)
            # round to the cache's float32 storage so predict and eval agree exactly
            tensors = [dataclasses.replace(t, values=t.values.astype(np.float32))
                       for t in clip_to_tensors(clip, pipeline, stft)]
            pred = predict_clip(model, tensors, args.rule, n_segments=len(tensors))
            label = "" if clip.label == Label.UNLABELED else int(clip.label)
            w.writerow([clip.clip_id, repr(pred.clip_prob), label])


HANDLERS = {
    "synth": cmd_synth,
    "analyze": cmd_analyze,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
}

_INVALID = (ConfigError, UsageError, ManifestError, ClipFormatError, ModelFormatError,
            SingleClassError, TrainingError, ValueError)


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and not argv[0].startswith("-") and argv[0] not in COMMANDS:
        return _fail("UnknownSubcommand", f"unknown subcommand {argv[0]!r}; choose from {list(COMMANDS)}",
                     EXIT_USAGE)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("UsageError", str(exc), EXIT_INVALID)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        HANDLERS[args.command](args, cfg)
    except _INVALID as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_INVALID)
    except OSError as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_IO)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
