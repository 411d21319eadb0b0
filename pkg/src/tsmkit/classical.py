"""Classical time-scale modification: OLA, WSOLA and the phase vocoder.

All three share the same speed semantics: speed r > 1 plays faster, so
the output has round(len(x) / r) samples at the input sample rate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import Waveform
from .dsp import ENVELOPE_FLOOR, hann, irfft, rfft

SPEED_MIN = 0.25
SPEED_MAX = 4.0

# Literature-standard defaults for 22050 Hz material.
WSOLA_FRAME_LEN = 1024
PV_FRAME_LEN = 2048
DEFAULT_SYNTHESIS_HOP = 512
DEFAULT_TOLERANCE = 512


@dataclass
class TsmParams:
    """Shared knobs for the time-domain and spectral stretchers.

    `tolerance` is the WSOLA search half-width; `phase_lock` enables
    identity phase locking in the phase vocoder.
    """

    speed: float = 1.0
    frame_len: int = WSOLA_FRAME_LEN
    synthesis_hop: int = DEFAULT_SYNTHESIS_HOP
    tolerance: int = DEFAULT_TOLERANCE
    phase_lock: bool = False

    def __post_init__(self):
        if not SPEED_MIN <= self.speed <= SPEED_MAX:
            raise ValueError(f"speed must be in [{SPEED_MIN}, {SPEED_MAX}], got {self.speed}")
        if self.frame_len <= 0:
            raise ValueError("frame_len must be positive")
        if not 0 < self.synthesis_hop <= self.frame_len // 2:
            raise ValueError("synthesis_hop must be in (0, frame_len/2]")
        if not 0 <= self.tolerance <= self.frame_len // 2:
            raise ValueError("tolerance must be in [0, frame_len/2]")

    @property
    def analysis_hop(self) -> int:
        return max(1, round(self.synthesis_hop * self.speed))


def _output_length(n_samples: int, speed: float) -> int:
    return max(1, int(np.floor(n_samples / speed + 0.5)))


def _synthesis_frame_count(out_len: int, frame_len: int, hop: int) -> int:
    return 1 + max(0, -(-(out_len - frame_len) // hop))


def ola_stretch(x: Waveform, p: TsmParams) -> Waveform:
    """Plain overlap-add stretching: frames taken at the analysis hop,
    laid down at the synthesis hop.  No realignment, so periodic inputs
    show interference between misaligned frames."""
    return Waveform(_time_domain_stretch(x.samples, p, tolerance=0), x.sample_rate)


def wsola_stretch(x: Waveform, p: TsmParams) -> Waveform:
    """Waveform-similarity OLA: each analysis frame may shift by up to
    +-tolerance samples to maximize normalized cross-correlation with the
    natural progression of the previous frame."""
    return Waveform(_time_domain_stretch(x.samples, p, tolerance=p.tolerance), x.sample_rate)


def _time_domain_stretch(x: np.ndarray, p: TsmParams, tolerance: int) -> np.ndarray:
    n = x.size
    frame_len, hop_s, hop_a = p.frame_len, p.synthesis_hop, p.analysis_hop
    if n < frame_len:
        raise ValueError(f"input ({n} samples) shorter than one frame ({frame_len})")

    out_len = _output_length(n, p.speed)
    n_frames = _synthesis_frame_count(out_len, frame_len, hop_s)

    # Zero-pad so every candidate frame (last nominal position + tolerance)
    # stays in bounds; padded material only leaks into the trimmed tail.
    pad_to = (n_frames - 1) * hop_a + tolerance + frame_len
    xp = np.pad(x, (0, max(0, pad_to - n))) if pad_to > n else x
    max_start = xp.size - frame_len

    window = hann(frame_len)
    starts = np.empty(n_frames, dtype=np.int64)
    starts[0] = 0
    if tolerance > 0 and n_frames > 1:
        windows_view = np.lib.stride_tricks.sliding_window_view(xp, frame_len)
        csum = np.concatenate([[0.0], np.cumsum(xp * xp)])
        for i in range(1, n_frames):
            nominal = i * hop_a
            ref_start = min(starts[i - 1] + hop_s, max_start)
            ref = xp[ref_start : ref_start + frame_len]
            ref_norm = np.sqrt(max(csum[ref_start + frame_len] - csum[ref_start], 0.0))
            lo = max(0, nominal - tolerance)
            hi = min(max_start, nominal + tolerance)
            cands = windows_view[lo : hi + 1]
            dots = cands @ ref
            norms = np.sqrt(np.maximum(csum[lo + frame_len : hi + frame_len + 1] - csum[lo : hi + 1], 0.0))
            denom = norms * ref_norm
            ncc = np.where(denom > 0, dots / np.maximum(denom, 1e-300), 0.0)
            best = ncc.max()
            ties = np.flatnonzero(ncc == best) + lo
            starts[i] = ties[np.argmin(np.abs(ties - nominal))]
    else:
        starts[1:] = np.minimum(np.arange(1, n_frames) * hop_a, max_start)

    frames = xp[starts[:, None] + np.arange(frame_len)] * window
    out = _overlap_add_trim(frames, hop_s, window, out_len)
    return out


def _overlap_add_trim(frames: np.ndarray, hop: int, window: np.ndarray, out_len: int) -> np.ndarray:
    n_frames, frame_len = frames.shape
    total = (n_frames - 1) * hop + frame_len
    num = np.zeros(total)
    den = np.zeros(total)
    windowed = frames * window
    wsq = window * window
    for i in range(n_frames):
        s = i * hop
        num[s : s + frame_len] += windowed[i]
        den[s : s + frame_len] += wsq
    out = num / np.maximum(den, ENVELOPE_FLOOR)
    if out.size < out_len:
        out = np.pad(out, (0, out_len - out.size))
    return out[:out_len]


def _wrap_phase(values: np.ndarray) -> np.ndarray:
    """Principal value in (-pi, pi]."""
    return values - 2.0 * np.pi * np.ceil((values - np.pi) / (2.0 * np.pi))


def pv_stretch(x: Waveform, p: TsmParams) -> Waveform:
    """Phase-vocoder stretching.

    Per-bin instantaneous frequency is estimated from the wrapped phase
    increment across the analysis hop and re-propagated at the synthesis
    hop; magnitudes carry over.  With `phase_lock`, bins around each
    spectral peak keep their analysis phase offset to the peak
    (identity phase locking).
    """
    n = len(x)
    frame_len, hop_s, hop_a = p.frame_len, p.synthesis_hop, p.analysis_hop
    if n < frame_len:
        raise ValueError(f"input ({n} samples) shorter than one frame ({frame_len})")
    if frame_len & (frame_len - 1):
        raise ValueError(f"frame_len must be a power of two, got {frame_len}")

    out_len = _output_length(n, p.speed)
    n_frames = _synthesis_frame_count(out_len, frame_len, hop_s)
    pad_to = (n_frames - 1) * hop_a + frame_len
    xp = np.pad(x.samples, (0, max(0, pad_to - n))) if pad_to > n else x.samples

    window = hann(frame_len)
    starts = np.arange(n_frames) * hop_a
    frames = xp[starts[:, None] + np.arange(frame_len)] * window
    spectra = rfft(frames, axis=1)

    mags = np.abs(spectra)
    phases = np.angle(spectra)
    omega = 2.0 * np.pi * np.arange(frame_len // 2 + 1) / frame_len  # rad/sample

    synth_phases = np.empty_like(phases)
    synth_phases[0] = phases[0]
    for i in range(1, n_frames):
        deviation = _wrap_phase(phases[i] - phases[i - 1] - omega * hop_a)
        inst_freq = omega + deviation / hop_a
        synth_phases[i] = synth_phases[i - 1] + hop_s * inst_freq
        if p.phase_lock:
            synth_phases[i] = _lock_to_peaks(mags[i], phases[i], synth_phases[i])

    out_frames = irfft(mags * np.exp(1j * synth_phases), n=frame_len, axis=1)
    out = _overlap_add_trim(out_frames, hop_s, window, out_len)
    return Waveform(out, x.sample_rate)


def _lock_to_peaks(mag: np.ndarray, analysis_phase: np.ndarray, synth_phase: np.ndarray) -> np.ndarray:
    """Identity phase locking: within each peak's region of influence,
    synthesis phases follow the peak's propagated phase plus the
    analysis-phase offset to the peak."""
    n_bins = mag.size
    if n_bins < 5:
        return synth_phase
    interior = mag[2:-2]
    is_peak = (
        (interior > mag[1:-3])
        & (interior > mag[:-4])
        & (interior >= mag[3:-1])
        & (interior >= mag[4:])
    )
    peaks = np.flatnonzero(is_peak) + 2
    if peaks.size == 0:
        return synth_phase

    # region boundaries at midpoints between adjacent peaks
    edges = np.empty(peaks.size + 1, dtype=np.int64)
    edges[0] = 0
    edges[-1] = n_bins
    edges[1:-1] = (peaks[:-1] + peaks[1:] + 1) // 2
    owner = np.repeat(peaks, np.diff(edges))
    locked = synth_phase[owner] + (analysis_phase - analysis_phase[owner])
    locked[peaks] = synth_phase[peaks]
    return locked
