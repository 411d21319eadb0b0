"""Windowing, framing, overlap-add and STFT primitives.

These functions work on plain 1-D/2-D float arrays; the `Waveform`
wrapper stays at the call sites.  Spectra are complex arrays of shape
(n_frames, frame_len // 2 + 1); magnitude and phase are `np.abs` /
`np.angle` views on them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ENVELOPE_FLOOR = 1e-8


@dataclass(frozen=True)
class FrameGrid:
    """Uniform analysis grid: frame length and hop, both in samples."""

    frame_len: int
    hop: int

    def __post_init__(self):
        if self.frame_len <= 0:
            raise ValueError(f"frame_len must be positive, got {self.frame_len}")
        if not 0 < self.hop <= self.frame_len:
            raise ValueError(f"hop must be in (0, frame_len], got {self.hop}")

    def count(self, n_samples: int) -> int:
        """Number of frames covering `n_samples` (tail zero-padded)."""
        if n_samples < self.frame_len:
            raise ValueError("signal shorter than one frame")
        return -(-(n_samples - self.frame_len) // self.hop) + 1


def hann(frame_len: int) -> np.ndarray:
    """Periodic Hann window, w[n] = 0.5 (1 - cos(2 pi n / N))."""
    if frame_len < 2:
        raise ValueError(f"frame_len must be >= 2, got {frame_len}")
    n = np.arange(frame_len)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / frame_len)


def frame(signal, grid: FrameGrid) -> np.ndarray:
    """Slice a signal into overlapping frames (tail zero-padded).

    Frame i is signal[i*hop : i*hop + frame_len]; the frame count is
    ceil((len - frame_len) / hop) + 1.
    """
    x = np.asarray(signal, dtype=np.float64)
    count = grid.count(x.size)
    padded = (count - 1) * grid.hop + grid.frame_len
    if padded > x.size:
        x = np.pad(x, (0, padded - x.size))
    view = np.lib.stride_tricks.sliding_window_view(x, grid.frame_len)
    return view[:: grid.hop][:count].copy()


def overlap_add(frames, hop: int, synthesis_window=None) -> np.ndarray:
    """Window frames, sum them at `hop` spacing, and normalize.

    Normalization divides by the summed squared synthesis window
    (floored at ENVELOPE_FLOOR), so analysis-windowed frames overlap-add
    back to the input for any hop with a nonzero envelope.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ValueError("frames must be a non-empty 2-D array")
    if hop <= 0:
        raise ValueError(f"hop must be positive, got {hop}")
    n_frames, frame_len = frames.shape
    if synthesis_window is None:
        win = np.ones(frame_len)
    else:
        win = np.asarray(synthesis_window, dtype=np.float64)
        if win.shape != (frame_len,):
            raise ValueError("synthesis window length must match frame length")

    out_len = (n_frames - 1) * hop + frame_len
    num = np.zeros(out_len)
    den = np.zeros(out_len)
    windowed = frames * win
    wsq = win * win
    for i in range(n_frames):  # fixed summation order keeps output deterministic
        s = i * hop
        num[s : s + frame_len] += windowed[i]
        den[s : s + frame_len] += wsq
    return num / np.maximum(den, ENVELOPE_FLOOR)


def rfft(x, axis: int = -1) -> np.ndarray:
    """Real-input FFT (length frame_len // 2 + 1 bins)."""
    return np.fft.rfft(np.asarray(x, dtype=np.float64), axis=axis)


def irfft(spectrum, n: int, axis: int = -1) -> np.ndarray:
    """Inverse of `rfft` for a known frame length."""
    return np.fft.irfft(spectrum, n=n, axis=axis)


def stft(signal, frame_len: int, hop: int, window=None) -> np.ndarray:
    """Short-time Fourier transform, one spectrum row per frame."""
    win = hann(frame_len) if window is None else np.asarray(window, dtype=np.float64)
    frames = frame(signal, FrameGrid(frame_len, hop))
    return rfft(frames * win, axis=1)


def istft(spectra, frame_len: int, hop: int, window=None) -> np.ndarray:
    """Inverse STFT via windowed overlap-add with envelope normalization."""
    spectra = np.asarray(spectra)
    if spectra.ndim != 2 or spectra.shape[1] != frame_len // 2 + 1:
        raise ValueError(
            f"expected {frame_len // 2 + 1} bins per spectrum, got shape {spectra.shape}"
        )
    win = hann(frame_len) if window is None else np.asarray(window, dtype=np.float64)
    frames = irfft(spectra, n=frame_len, axis=1)
    return overlap_add(frames, hop, win)
