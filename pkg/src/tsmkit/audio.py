"""WAV I/O, resampling and the canonical mono waveform type.

Everything downstream of this module operates on `Waveform`: a 1-D float
array of samples in [-1, 1] plus a sample rate.  The model path assumes
the canonical rate of 22050 Hz; see `CANONICAL_RATE`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

CANONICAL_RATE = 22050

# Polyphase anti-aliasing filter: windowed sinc, Kaiser beta and the number
# of sinc zero crossings kept per side.
_KAISER_BETA = 8.6
_FILTER_ZEROS = 64


class AudioIOError(Exception):
    """A WAV file could not be read or written."""


@dataclass
class Waveform:
    """Mono audio: float64 samples with a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if self.samples.size < 1:
            raise ValueError("waveform must contain at least one sample")
        self.sample_rate = int(self.sample_rate)
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        """Length in seconds."""
        return self.samples.size / self.sample_rate


def load_wav(path) -> Waveform:
    """Read a PCM16 or float32 WAV file as a mono waveform.

    Stereo files are mixed down by channel average; 16-bit PCM is scaled
    by 1/32768.  Anything other than 1-2 channels of PCM16/float is
    rejected.
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise AudioIOError(f"cannot read {path}: no such file") from None
    except Exception as exc:
        raise AudioIOError(f"cannot read {path}: {exc}") from exc

    if data.size == 0:
        raise AudioIOError(f"{path}: zero-length audio")
    if data.dtype == np.int16:
        scale = 1.0 / 32768.0
    elif data.dtype == np.float32:
        scale = 1.0
    else:
        raise AudioIOError(f"{path}: unsupported sample format {data.dtype} (PCM16/float32 only)")

    if data.ndim == 2:
        if data.shape[1] > 2:
            raise AudioIOError(f"{path}: {data.shape[1]} channels, at most 2 supported")
        data = data.mean(axis=1)
    elif data.ndim != 1:
        raise AudioIOError(f"{path}: unsupported sample layout {data.shape}")

    samples = np.asarray(data, dtype=np.float64) * scale
    return Waveform(np.clip(samples, -1.0, 1.0), int(rate))


def write_wav(w: Waveform, path) -> None:
    """Write a waveform as mono 16-bit PCM.

    Samples are clamped to [-1, 1] and quantized with a
    round-half-away-from-zero quantizer at full scale 32768 (so +1.0
    saturates to 32767).
    """
    x = np.clip(w.samples, -1.0, 1.0)
    q = np.copysign(np.floor(np.abs(x) * 32768.0 + 0.5), x)
    q = np.clip(q, -32768, 32767).astype(np.int16)
    try:
        wavfile.write(Path(path), w.sample_rate, q)
    except Exception as exc:
        raise AudioIOError(f"cannot write {path}: {exc}") from exc


def _round_half_up_ratio(n: int, num: int, den: int) -> int:
    """round(n * num / den) with halves rounded up, in exact integer math."""
    return (2 * n * num + den) // (2 * den)


def _antialias_filter(up: int, down: int) -> np.ndarray:
    """Unity-gain lowpass for polyphase resampling at the zero-stuffed rate.

    Cutoff sits at the lower of the two Nyquist frequencies; scipy's
    resample_poly applies the `up` gain itself.
    """
    m = max(up, down)
    half = _FILTER_ZEROS * m
    n = np.arange(-half, half + 1)
    return np.sinc(n / m) / m * np.kaiser(2 * half + 1, _KAISER_BETA)


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Band-limited resampling to `target_rate` (polyphase windowed sinc).

    Output length is round(len * target / source); a pure tone below both
    Nyquist limits keeps its frequency.
    """
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError(f"target rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)

    g = math.gcd(w.sample_rate, target_rate)
    up, down = target_rate // g, w.sample_rate // g
    y = resample_poly(w.samples, up, down, window=_antialias_filter(up, down))
    n_out = _round_half_up_ratio(len(w), up, down)
    # resample_poly returns ceil(n*up/down) samples, never fewer than n_out
    return Waveform(y[:n_out], target_rate)


def normalize(w: Waveform, peak: float = 1.0) -> Waveform:
    """Peak-normalize; silent input is returned unchanged."""
    top = np.abs(w.samples).max()
    if top == 0.0:
        return Waveform(w.samples.copy(), w.sample_rate)
    return Waveform(w.samples * (peak / top), w.sample_rate)
