"""Time-domain preprocessing: drop-out detection, decimation, segmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .ieeg_io import Clip, Label

DEFAULT_FIR_TAPS = 129
DEFAULT_CUTOFF_FRACTION = 0.9
DEFAULT_DROPOUT_EXCLUDE = 0.99


@dataclass(frozen=True)
class PipelineConfig:
    decimation_factor: int = 4
    segment_seconds: int = 60
    fir_taps: int = DEFAULT_FIR_TAPS
    fir_cutoff_fraction: float = DEFAULT_CUTOFF_FRACTION
    dropout_exclude_fraction: float = DEFAULT_DROPOUT_EXCLUDE

    def __post_init__(self):
        if self.decimation_factor not in (2, 4):
            raise ValueError(f"decimation_factor must be 2 or 4, got {self.decimation_factor}")
        if self.segment_seconds < 1:
            raise ValueError("segment_seconds must be >= 1")
        if self.fir_taps < 0 or (self.fir_taps and self.fir_taps % 2 == 0):
            raise ValueError(f"fir_taps must be 0 (no filter) or odd, got {self.fir_taps}")
        if not 0 < self.fir_cutoff_fraction < 1:
            raise ValueError("fir_cutoff_fraction must lie in (0, 1)")
        if not 0 < self.dropout_exclude_fraction <= 1:
            raise ValueError("dropout_exclude_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class DropoutReport:
    zero_sample_indices: np.ndarray
    n_samples: int

    @property
    def fraction(self) -> float:
        return len(self.zero_sample_indices) / self.n_samples


@dataclass(frozen=True)
class Segment:
    samples: np.ndarray  # channels x d
    sampling_rate: float
    parent_clip_id: str
    segment_index: int
    label: Label
    patient_id: str = ""


class SignalTooShortError(ValueError):
    pass


def detect_dropout(clip: Clip) -> DropoutReport:
    """Instants where every channel reads exactly 0.0."""
    idx = np.flatnonzero(np.all(clip.samples == 0.0, axis=0))
    return DropoutReport(idx, clip.n_samples)


def antialias_taps(factor: int, n_taps: int = DEFAULT_FIR_TAPS,
                   cutoff_fraction: float = DEFAULT_CUTOFF_FRACTION) -> np.ndarray:
    """Hamming-windowed low-pass FIR with cutoff at cutoff_fraction of the new Nyquist."""
    return sps.firwin(n_taps, cutoff_fraction / factor, window="hamming")


def zero_phase_fir(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Forward-backward FIR filtering along the last axis.

    Running a filter forward and then backward equals a single convolution
    with the taps' autocorrelation, so that is what is computed (via FFT).
    Edges use odd reflection about the end samples, as filtfilt does.
    """
    kernel = np.convolve(taps, taps[::-1])
    half = len(kernel) // 2
    n = x.shape[-1]
    pad = min(half, n - 1)
    if pad > 0:
        left = 2 * x[..., :1] - x[..., pad:0:-1]
        right = 2 * x[..., -1:] - x[..., -2:-pad - 2:-1]
        ext = np.concatenate([left, x, right], axis=-1)
    else:
        ext = x
    # zero-pad so the full kernel fits when the reflection had to be shortened
    extra = half - pad
    if extra:
        widths = [(0, 0)] * (x.ndim - 1) + [(extra, extra)]
        ext = np.pad(ext, widths)
    kernel = kernel.reshape((1,) * (x.ndim - 1) + (-1,))
    return sps.fftconvolve(ext, kernel, mode="valid", axes=-1)


def decimate(clip: Clip, cfg: PipelineConfig) -> Clip:
    """Low-pass (zero phase) then keep every k-th sample; tail samples beyond a multiple of k are dropped."""
    k = cfg.decimation_factor
    if clip.n_samples < max(cfg.fir_taps, k):
        raise SignalTooShortError(
            f"clip {clip.clip_id!r} has {clip.n_samples} samples, need >= {max(cfg.fir_taps, k)}"
        )
    n_keep = clip.n_samples // k
    x = clip.samples[:, : n_keep * k].astype(np.float64)
    if cfg.fir_taps:
        x = zero_phase_fir(x, antialias_taps(k, cfg.fir_taps, cfg.fir_cutoff_fraction))
    return clip.with_samples(x[:, ::k], sampling_rate=clip.sampling_rate / k)


def segment_clip(clip: Clip, cfg: PipelineConfig) -> list[Segment]:
    d = cfg.segment_seconds * clip.sampling_rate
    if d != int(d):
        raise ValueError(
            f"segment of {cfg.segment_seconds} s at {clip.sampling_rate} Hz is not a whole number of samples"
        )
    d = int(d)
    n_segments = clip.n_samples // d
    if n_segments < 1:
        raise SignalTooShortError(
            f"clip {clip.clip_id!r} lasts {clip.duration:.2f} s, shorter than one "
            f"{cfg.segment_seconds} s segment"
        )
    return [
        Segment(
            samples=clip.samples[:, i * d:(i + 1) * d],
            sampling_rate=clip.sampling_rate,
            parent_clip_id=clip.clip_id,
            segment_index=i,
            label=clip.label,
            patient_id=clip.patient_id,
        )
        for i in range(n_segments)
    ]


def power_spectrum(channel, sampling_rate: float, nperseg: int = 256):
    """Welch power spectral density of one channel.

    Returns ``(freqs, power)``; frequencies run from 0 to Nyquist.
    """
    x = np.asarray(channel, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("power_spectrum needs a 1-D signal with at least 2 samples")
    freqs, power = sps.welch(x, fs=sampling_rate, window="hann", nperseg=min(nperseg, x.size))
    return freqs, np.maximum(power, 0.0)


def band_power(channel, sampling_rate: float, low: float, high: float) -> float:
    """Mean Welch power over frequencies in [low, high]."""
    freqs, power = power_spectrum(channel, sampling_rate)
    mask = (freqs >= low) & (freqs <= high)
    return float(power[mask].mean())
