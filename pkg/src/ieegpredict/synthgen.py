"""Deterministic synthetic iEEG datasets with a tunable preictal signature.

Interictal clips are 1/f ("pink") noise: a few latent sources mixed into the
channels plus independent per-channel noise. Preictal clips add, on top of
the same kind of background, 2-7 Hz oscillatory bursts under Gaussian
envelopes and sparse slow spikes, scaled by ``signature_strength`` and by a
per-patient channel gain. With strength 0 the classes are identical in
distribution.

Every clip draws from its own random stream keyed by
(seed, patient, split, label, index), so output is bitwise reproducible
and independent of generation order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ieeg_io import (
    CLIP_SUFFIX,
    Clip,
    ClipEntry,
    DatasetManifest,
    Label,
    PatientRecord,
    save_manifest,
    write_clip,
)

_SPLIT_CODE = {"train": 0, "test": 1}


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 3
    train_preictal: int = 10
    train_interictal: int | None = None  # None: round(imbalance_ratio * train_preictal)
    test_preictal: int = 5
    test_interictal: int | None = None
    n_channels: int = 16
    sampling_rate: float = 400.0
    clip_seconds: int = 600
    signature_strength: float = 1.0
    imbalance_ratio: float = 6.0
    rng_seed: int = 0
    noise_std: float = 50.0  # microvolts
    n_sources: int = 4
    burst_rate_per_min: float = 6.0
    spike_rate_per_min: float = 12.0

    def __post_init__(self):
        counts = [self.n_patients, self.train_preictal, self.test_preictal,
                  self.train_interictal or 0, self.test_interictal or 0]
        if any(c < 0 for c in counts):
            raise ValueError("clip and patient counts must be >= 0")
        if self.n_channels < 1 or self.clip_seconds < 1 or not self.sampling_rate > 0:
            raise ValueError("n_channels, clip_seconds and sampling_rate must be positive")
        if self.signature_strength < 0:
            raise ValueError("signature_strength must be >= 0")
        if not self.imbalance_ratio > 0:
            raise ValueError("imbalance_ratio must be positive")
        if self.n_sources < 0 or self.noise_std <= 0:
            raise ValueError("n_sources must be >= 0 and noise_std positive")

    def n_clips(self, split: str, label: Label) -> int:
        if split == "train":
            pre, inter = self.train_preictal, self.train_interictal
        else:
            pre, inter = self.test_preictal, self.test_interictal
        if label == Label.PREICTAL:
            return pre
        return int(round(self.imbalance_ratio * pre)) if inter is None else inter

    @property
    def n_samples(self) -> int:
        return int(round(self.clip_seconds * self.sampling_rate))


@dataclass(frozen=True)
class PatientProfile:
    mixing: np.ndarray  # channels x sources
    channel_gain: np.ndarray  # channels
    burst_freq: tuple[float, float]


def pink_noise(rng: np.random.Generator, n_rows: int, n: int, fs: float, f_min: float = 0.5) -> np.ndarray:
    """Unit-variance noise with power spectral density ~ 1/f above f_min."""
    white = rng.standard_normal((n_rows, n))
    spec = np.fft.rfft(white, axis=-1)
    f = np.fft.rfftfreq(n, 1.0 / fs)
    shape = 1.0 / np.sqrt(np.maximum(f, f_min))
    shape[0] = 0.0
    x = np.fft.irfft(spec * shape, n=n, axis=-1)
    x /= x.std(axis=-1, keepdims=True)
    return x


def patient_profile(cfg: SynthConfig, patient: int) -> PatientProfile:
    rng = np.random.default_rng([cfg.rng_seed, patient, 99])
    c, k = cfg.n_channels, cfg.n_sources
    mixing = np.zeros((c, k))
    if k:
        # each channel leans on one source, giving clustered correlation structure
        home = rng.integers(0, k, size=c)
        mixing = 0.25 * rng.standard_normal((c, k))
        mixing[np.arange(c), home] += rng.uniform(0.6, 1.0, size=c)
    gain = rng.uniform(0.4, 1.6, size=c)
    low = rng.uniform(2.0, 4.0)
    return PatientProfile(mixing, gain, (low, low + 3.0))


def background(rng: np.random.Generator, cfg: SynthConfig, profile: PatientProfile) -> np.ndarray:
    n, fs = cfg.n_samples, cfg.sampling_rate
    own = pink_noise(rng, cfg.n_channels, n, fs)
    if cfg.n_sources:
        x = profile.mixing @ pink_noise(rng, cfg.n_sources, n, fs) + 0.6 * own
    else:
        x = own
    x /= x.std(axis=-1, keepdims=True)
    return cfg.noise_std * x


def preictal_signature(rng: np.random.Generator, cfg: SynthConfig, profile: PatientProfile) -> np.ndarray:
    """Bursts and spikes, shared in time across channels, unit strength."""
    n, fs = cfg.n_samples, cfg.sampling_rate
    t = np.arange(n) / fs
    minutes = cfg.clip_seconds / 60.0
    drive = np.zeros(n)
    for _ in range(rng.poisson(cfg.burst_rate_per_min * minutes)):
        center = rng.uniform(0, cfg.clip_seconds)
        width = rng.uniform(1.0, 2.0)
        freq = rng.uniform(*profile.burst_freq)
        lo, hi = np.searchsorted(t, [center - 4 * width, center + 4 * width])
        tt = t[lo:hi]
        env = np.exp(-0.5 * ((tt - center) / width) ** 2)
        drive[lo:hi] += 2.0 * env * np.sin(2 * np.pi * freq * tt + rng.uniform(0, 2 * np.pi))
    for _ in range(rng.poisson(cfg.spike_rate_per_min * minutes)):
        center = rng.uniform(0, cfg.clip_seconds)
        width = 0.04
        lo, hi = np.searchsorted(t, [center - 5 * width, center + 5 * width])
        drive[lo:hi] += rng.choice([-1.0, 1.0]) * 3.0 * np.exp(-0.5 * ((t[lo:hi] - center) / width) ** 2)
    return cfg.noise_std * profile.channel_gain[:, None] * drive[None, :]


def generate_clip(cfg: SynthConfig, patient: int, split: str, label: Label, index: int,
                  profile: PatientProfile | None = None) -> Clip:
    profile = profile or patient_profile(cfg, patient)
    rng = np.random.default_rng([cfg.rng_seed, patient, _SPLIT_CODE[split], int(label), index])
    x = background(rng, cfg, profile)
    if label == Label.PREICTAL and cfg.signature_strength > 0:
        x = x + cfg.signature_strength * preictal_signature(rng, cfg, profile)
    return Clip.from_array(
        x,
        cfg.sampling_rate,
        label=label,
        clip_id=clip_name(patient, split, label, index),
        patient_id=patient_name(patient),
        sequence_index=index % 6 + 1,
    )


def patient_name(patient: int) -> str:
    return f"P{patient + 1}"


def clip_name(patient: int, split: str, label: Label, index: int) -> str:
    tag = "preictal" if label == Label.PREICTAL else "interictal"
    return f"{patient_name(patient)}_{split}_{tag}_{index:04d}"


def generate(cfg: SynthConfig, out_dir) -> DatasetManifest:
    """Write every clip under out_dir/<patient>/ and out_dir/manifest.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    patients = []
    for p in range(cfg.n_patients):
        profile = patient_profile(cfg, p)
        record = PatientRecord(patient_name(p))
        pdir = out_dir / record.patient_id
        pdir.mkdir(exist_ok=True)
        for split in ("train", "test"):
            for label in (Label.INTERICTAL, Label.PREICTAL):
                for i in range(cfg.n_clips(split, label)):
                    clip = generate_clip(cfg, p, split, label, i, profile)
                    path = pdir / f"{clip.clip_id}{CLIP_SUFFIX}"
                    write_clip(clip, path)
                    record.clips.append(ClipEntry(path, split, clip.clip_id, label))
        patients.append(record)
    manifest = DatasetManifest(patients, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


# -- failure-mode injectors -----------------------------------------------------------


def inject_dropout(clip: Clip, windows) -> Clip:
    """Zero every channel over each (start, length) window; windows may overlap."""
    x = clip.samples.copy()
    for start, length in windows:
        if length < 0:
            raise ValueError("window length must be >= 0")
        x[:, max(0, start):max(0, start + length)] = 0.0
    return clip.with_samples(x)


def inject_outliers(clip: Clip, count: int, magnitude_sigma: float, seed: int = 0,
                    channels=None) -> tuple[Clip, list[tuple[int, int]]]:
    """Set ``count`` distinct random samples per affected channel to mean +/- magnitude * std.

    Returns the new clip and the (sample, channel) positions touched.
    """
    rng = np.random.default_rng(seed)
    x = clip.samples.astype(np.float64)
    channels = range(clip.n_channels) if channels is None else channels
    positions = []
    for ch in channels:
        mean, std = x[ch].mean(), x[ch].std()
        idx = np.sort(rng.choice(clip.n_samples, size=count, replace=False))
        signs = rng.choice([-1.0, 1.0], size=count)
        x[ch, idx] = mean + signs * magnitude_sigma * std
        positions.extend((int(i), int(ch)) for i in idx)
    return clip.with_samples(x), sorted(positions)


def inject_shift(clip: Clip, scale: float, offset: float) -> Clip:
    """Affine change of every sample: x -> scale * x + offset."""
    if scale == 1 and offset == 0:
        return clip.with_samples(clip.samples.copy())
    return clip.with_samples(scale * clip.samples.astype(np.float64) + offset)
