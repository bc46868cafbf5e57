"""Segment -> per-channel log-power STFT images, plus standardization.

A 6,000-sample segment with the default 256-sample Hann window, hop 224 and
256-point FFT becomes a 129 x 26 image per channel.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .ieeg_io import Label
from .signal_core import Segment

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 256
    hop: int = 224
    fft_len: int = 256
    window: str = "hann"
    log_floor_epsilon: float = 1e-12

    def __post_init__(self):
        if self.window_len < 1 or self.hop < 1:
            raise ValueError("window_len and hop must be >= 1")
        if self.fft_len < self.window_len:
            raise ValueError("fft_len must be >= window_len")
        if self.window not in _WINDOWS:
            raise ValueError(f"unknown window {self.window!r}; choose from {sorted(_WINDOWS)}")
        if not self.log_floor_epsilon > 0:
            raise ValueError("log_floor_epsilon must be positive")

    @property
    def n_freq(self) -> int:
        return self.fft_len // 2 + 1

    def n_frames(self, d: int) -> int:
        return (d - self.window_len) // self.hop + 1

    @property
    def floor_db(self) -> float:
        return 10.0 * np.log10(self.log_floor_epsilon)


def _hann(n: int) -> np.ndarray:
    # periodic Hann, the usual spectral-analysis variant
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def _rect(n: int) -> np.ndarray:
    return np.ones(n)


def _hamming(n: int) -> np.ndarray:
    return 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(n) / n)


_WINDOWS = {"hann": _hann, "hamming": _hamming, "rect": _rect}


@dataclass(frozen=True)
class SpectroTensor:
    values: np.ndarray  # channels x n_freq x n_frames, dB
    clip_id: str
    segment_index: int
    label: Label
    patient_id: str = ""

    @property
    def shape(self):
        return self.values.shape


def stft_image(x, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """dB power image (n_freq x n_frames) of a 1-D signal.

    Power is |FFT(window * frame)|^2 / sum(window^2), floored at epsilon
    before the log.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("stft_image expects a 1-D signal")
    return _stft_rows(x[np.newaxis], cfg)[0]


def _stft_rows(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    d = x.shape[-1]
    if d < cfg.window_len:
        raise ValueError(f"signal of {d} samples is shorter than one {cfg.window_len}-sample window")
    win = _WINDOWS[cfg.window](cfg.window_len)
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.window_len, axis=-1)[:, :: cfg.hop]
    spec = np.fft.rfft(frames * win, n=cfg.fft_len, axis=-1)
    power = (spec.real**2 + spec.imag**2) / np.sum(win**2)
    db = 10.0 * np.log10(np.maximum(power, cfg.log_floor_epsilon))
    return np.swapaxes(db, -1, -2)  # rows x n_freq x n_frames


def segment_to_tensor(seg: Segment, cfg: StftConfig = StftConfig()) -> SpectroTensor:
    values = _stft_rows(np.asarray(seg.samples, dtype=np.float64), cfg)
    return SpectroTensor(values, seg.parent_clip_id, seg.segment_index, seg.label, seg.patient_id)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    per_image: bool = False

    def __post_init__(self):
        if not self.per_image and np.any(np.asarray(self.std) <= 0):
            raise ValueError("standardizer std entries must be positive")

    def to_json(self) -> dict:
        return {"mean": np.asarray(self.mean).tolist(), "std": np.asarray(self.std).tolist(),
                "per_image": self.per_image}

    @classmethod
    def from_json(cls, doc: dict) -> "Standardizer":
        return cls(np.asarray(doc["mean"], float), np.asarray(doc["std"], float),
                   bool(doc.get("per_image", False)))


def fit_standardizer(train, per_image: bool = False) -> Standardizer:
    """Per-channel scalar mean and std over every training entry of that channel.

    With ``per_image=True`` nothing is fitted; each tensor is later
    standardized by its own per-channel statistics.
    """
    train = list(train)
    if not train:
        raise ValueError("fit_standardizer needs at least one training tensor")
    n_ch = train[0].values.shape[0]
    if per_image:
        return Standardizer(np.zeros(n_ch), np.ones(n_ch), per_image=True)
    count = 0
    total = np.zeros(n_ch)
    for t in train:
        v = t.values.reshape(n_ch, -1)
        total += v.sum(axis=1)
        count += v.shape[1]
    mean = total / count
    sq = np.zeros(n_ch)
    for t in train:
        v = t.values.reshape(n_ch, -1) - mean[:, None]
        sq += np.einsum("ij,ij->i", v, v)
    std = np.maximum(np.sqrt(sq / count), STD_FLOOR)
    return Standardizer(mean, std)


def apply_standardizer(s: Standardizer, t: SpectroTensor) -> SpectroTensor:
    n_ch = t.values.shape[0]
    if s.per_image:
        flat = t.values.reshape(n_ch, -1)
        mean, std = flat.mean(axis=1), np.maximum(flat.std(axis=1), STD_FLOOR)
    else:
        if len(s.mean) != n_ch:
            raise ValueError(f"standardizer has {len(s.mean)} channels, tensor has {n_ch}")
        mean, std = np.asarray(s.mean), np.asarray(s.std)
    values = (t.values - mean[:, None, None]) / std[:, None, None]
    return replace(t, values=values)


# -- on-disk tensor cache ------------------------------------------------------
#
# index.json lists entries; each tensor lives in its own blob:
# three u32 LE dims followed by f32 LE values in C order.

CACHE_INDEX = "index.json"


@dataclass
class CacheEntry:
    file: str
    clip_id: str
    patient_id: str
    segment_index: int
    label: int
    split: str
    shape: list[int]


@dataclass
class TensorCache:
    root: Path
    entries: list[CacheEntry] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def load(self, entry: CacheEntry) -> SpectroTensor:
        return SpectroTensor(
            read_tensor_blob(self.root / entry.file).astype(np.float64),
            entry.clip_id,
            entry.segment_index,
            Label(entry.label),
            entry.patient_id,
        )

    def select(self, split: str | None = None, patient_id: str | None = None) -> list[CacheEntry]:
        return [
            e
            for e in self.entries
            if (split is None or e.split == split) and (patient_id is None or e.patient_id == patient_id)
        ]

    def patients(self) -> list[str]:
        return list(dict.fromkeys(e.patient_id for e in self.entries))

    def write_index(self) -> None:
        doc = {"meta": self.meta, "entries": [e.__dict__ for e in self.entries]}
        (self.root / CACHE_INDEX).write_text(json.dumps(doc, indent=1) + "\n")

    @classmethod
    def open(cls, root) -> "TensorCache":
        root = Path(root)
        index = root / CACHE_INDEX
        if not index.is_file():
            raise FileNotFoundError(f"no tensor cache index at {index}")
        doc = json.loads(index.read_text())
        return cls(root, [CacheEntry(**e) for e in doc["entries"]], doc.get("meta", {}))


def write_tensor_blob(values: np.ndarray, path) -> None:
    values = np.asarray(values)
    if values.ndim != 3:
        raise ValueError("tensor blobs hold 3-D arrays")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<3I", *values.shape))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_tensor_blob(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise ValueError(f"{path}: tensor blob shorter than its shape prefix")
    shape = struct.unpack("<3I", raw[:12])
    n = shape[0] * shape[1] * shape[2]
    if len(raw) - 12 < 4 * n:
        raise ValueError(f"{path}: tensor blob truncated")
    return np.frombuffer(raw, dtype="<f4", count=n, offset=12).reshape(shape)
