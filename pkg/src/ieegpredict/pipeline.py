"""Dataset-level orchestration shared by the CLI subcommands."""

from __future__ import annotations

import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import quant_analysis as qa
from .ieeg_io import Clip, DatasetManifest, Label, read_clip
from .predictor import SegmentSet
from .signal_core import PipelineConfig, decimate, detect_dropout, segment_clip
from .spectro import CacheEntry, SpectroTensor, StftConfig, TensorCache, segment_to_tensor, write_tensor_blob

log = logging.getLogger(__name__)


def clip_to_tensors(clip: Clip, pipeline: PipelineConfig, stft: StftConfig) -> list[SpectroTensor]:
    """Decimate, segment and map one clip to its per-segment spectrogram stacks."""
    reduced = decimate(clip, pipeline)
    return [segment_to_tensor(seg, stft) for seg in segment_clip(reduced, pipeline)]


def preprocess_dataset(manifest: DatasetManifest, pipeline: PipelineConfig, stft: StftConfig,
                       out_dir) -> tuple[TensorCache, dict]:
    """Write a tensor cache for every clip in the manifest.

    Training clips whose drop-out fraction reaches the exclusion threshold
    are skipped; test clips are always kept.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = TensorCache(out_dir)
    excluded = []
    dropout = {}
    shape = None
    for patient in manifest.patients:
        pdir = out_dir / patient.patient_id
        pdir.mkdir(exist_ok=True)
        for entry in patient.clips:
            clip = read_clip(entry.path, patient_id=patient.patient_id)
            frac = detect_dropout(clip).fraction
            dropout[f"{patient.patient_id}/{clip.clip_id}"] = frac
            if entry.split == "train" and frac >= pipeline.dropout_exclude_fraction:
                excluded.append({"patient_id": patient.patient_id, "clip_id": clip.clip_id,
                                 "dropout_fraction": frac})
                log.info("excluding %s: drop-out %.3f", clip.clip_id, frac)
                continue
            for t in clip_to_tensors(clip, pipeline, stft):
                name = f"{patient.patient_id}/{clip.clip_id}_s{t.segment_index:02d}.f32"
                write_tensor_blob(t.values, out_dir / name)
                shape = list(t.values.shape)
                cache.entries.append(CacheEntry(name, clip.clip_id, patient.patient_id,
                                                t.segment_index, int(t.label), entry.split, shape))
    cache.meta = {
        "pipeline": asdict(pipeline),
        "stft": asdict(stft),
        "tensor_shape": shape,
    }
    cache.write_index()
    report = {
        "n_tensors": len(cache.entries),
        "tensor_shape": shape,
        "excluded_clips": excluded,
        "dropout_fraction": dropout,
        "pipeline": asdict(pipeline),
        "stft": asdict(stft),
    }
    return cache, report


def load_segment_set(cache: TensorCache, split: str | None = None,
                     patient_id: str | None = None) -> SegmentSet:
    entries = cache.select(split, patient_id)
    if not entries:
        raise ValueError(f"tensor cache at {cache.root} has no entries for split={split!r}")
    shape = tuple(entries[0].shape)
    x = np.empty((len(entries),) + shape, dtype=np.float32)
    for i, e in enumerate(entries):
        if tuple(e.shape) != shape:
            raise ValueError(f"{e.file}: shape {e.shape} differs from {shape}")
        x[i] = cache.load(e).values
    return SegmentSet(
        x=x,
        labels=np.array([e.label for e in entries]),
        clip_ids=[e.clip_id for e in entries],
        patient_ids=[e.patient_id for e in entries],
        segment_index=np.array([e.segment_index for e in entries]),
    )


def analyze_dataset(manifest: DatasetManifest, split: str = "train", max_clips: int = 4,
                    z_threshold: float = 6.0, variance_threshold: float = 0.95,
                    shift_max_samples: int = 200_000) -> dict[str, dict]:
    """Exploratory report per patient.

    Statistics per class pool up to ``max_clips`` clips of that class from
    ``split``; the train/test shift compares the first clips of each split.
    """
    reports = {}
    for patient in manifest.patients:
        pooled: dict[str, list[np.ndarray]] = {}
        dropout = {}
        for entry in patient.entries(split):
            name = entry.label.name.lower()
            if len(pooled.get(name, [])) >= max_clips:
                continue
            clip = read_clip(entry.path, patient_id=patient.patient_id)
            dropout[clip.clip_id] = detect_dropout(clip).fraction
            pooled.setdefault(name, []).append(clip.samples)
        samples = {k: np.concatenate(v, axis=1) for k, v in pooled.items()}
        report = {"patient_id": patient.patient_id, "split": split,
                  "classes": qa.analyze_samples(samples, z_threshold, variance_threshold),
                  "dropout_fraction": dropout}

        shift = None
        train_e, test_e = patient.entries("train"), patient.entries("test")
        if train_e and test_e:
            a = read_clip(train_e[0].path).samples
            b = read_clip(test_e[0].path).samples
            step_a = max(1, a.shape[1] // shift_max_samples)
            step_b = max(1, b.shape[1] // shift_max_samples)
            shift = {
                "train_clip": train_e[0].clip_id,
                "test_clip": test_e[0].clip_id,
                "ks_per_channel": [
                    qa.distribution_shift(a[c, ::step_a], b[c, ::step_b]) for c in range(min(len(a), len(b)))
                ],
            }
        report["distribution_shift"] = shift
        reports[patient.patient_id] = report
    return reports


def label_counts(labels) -> dict[str, int]:
    labels = np.asarray(labels)
    return {
        "interictal": int(np.count_nonzero(labels == Label.INTERICTAL)),
        "preictal": int(np.count_nonzero(labels == Label.PREICTAL)),
    }
