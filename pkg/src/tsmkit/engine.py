"""Neural time-scale modification: encode, rescale the latent, decode.

Because one latent step spans a full compression-ratio window of audio
(more than a period of any audible frequency), resampling the latent
time axis changes duration without moving pitch.  The resampler is a
Catmull-Rom cubic; long inputs are processed in chunks whose latents
are cross-faded before decoding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import Waveform, resample
from .model import Autoencoder, Latent

SPEED_MIN = 0.25
SPEED_MAX = 4.0


@dataclass(frozen=True)
class ChunkPolicy:
    """Chunked processing for long inputs: chunk size in samples and the
    latent-domain overlap (in latent steps) cross-faded between chunks."""

    chunk_len: int = 220500  # 10 s at the canonical rate
    latent_overlap: int = 4


def speed_grid() -> list[float]:
    """The benchmark speed grid: 0.50-0.95 by 0.05 and 1.1-2.0 by 0.1."""
    slow = [round(0.5 + 0.05 * k, 2) for k in range(10)]
    fast = [round(1.1 + 0.1 * k, 1) for k in range(10)]
    return slow + fast


def _check_speed(r: float) -> None:
    if not SPEED_MIN <= r <= SPEED_MAX:
        raise ValueError(f"speed must be in [{SPEED_MIN}, {SPEED_MAX}], got {r}")


def scale_latent(latent: Latent, r: float) -> Latent:
    """Resample the latent time axis by 1/r with Catmull-Rom cubics.

    Output length is max(2, round(T / r)); the first and last steps map
    exactly onto the input endpoints.  Virtual points beyond the ends
    are linearly extrapolated so affine trends are reproduced exactly.
    """
    _check_speed(r)
    values = np.asarray(latent.values, dtype=np.float64)
    t_in = values.shape[1]
    if t_in < 2:
        raise ValueError(f"latent must have at least 2 steps, got {t_in}")

    t_out = max(2, int(np.floor(t_in / r + 0.5)))
    pos = np.arange(t_out) * ((t_in - 1) / (t_out - 1))
    seg = np.clip(np.floor(pos).astype(np.int64), 0, t_in - 2)
    t = pos - seg

    ext = np.concatenate(
        [
            (2.0 * values[:, :1] - values[:, 1:2]),
            values,
            (2.0 * values[:, -1:] - values[:, -2:-1]),
        ],
        axis=1,
    )
    p0 = ext[:, seg]
    p1 = ext[:, seg + 1]
    p2 = ext[:, seg + 2]
    p3 = ext[:, seg + 3]
    out = 0.5 * (
        2.0 * p1
        + (p2 - p0) * t
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t**2
        + (3.0 * p1 - 3.0 * p2 + p3 - p0) * t**3
    )
    out[:, 0] = values[:, 0]
    out[:, -1] = values[:, -1]
    return Latent(out.astype(latent.values.dtype), latent.compression_ratio)


def _merge_latents(chunks: list[np.ndarray], overlap: int) -> np.ndarray:
    """Concatenate chunk latents, linearly cross-fading `overlap` steps."""
    if len(chunks) == 1:
        return chunks[0]
    if overlap <= 0:
        return np.concatenate(chunks, axis=1)
    fade_in = np.arange(1, overlap + 1) / (overlap + 1.0)
    merged = chunks[0]
    for nxt in chunks[1:]:
        mixed = merged[:, -overlap:] * (1.0 - fade_in) + nxt[:, :overlap] * fade_in
        merged = np.concatenate([merged[:, :-overlap], mixed, nxt[:, overlap:]], axis=1)
    return merged


def stretch(
    x: Waveform,
    r: float,
    model: Autoencoder,
    chunking: ChunkPolicy | None = None,
) -> Waveform:
    """Time-scale a waveform by 1/r through the autoencoder's latent.

    The output holds round(len(x) / r) samples at the input rate.  When
    the input exceeds the chunk length, chunks aligned to the latent
    grid are encoded separately and merged in the latent domain before a
    single decode.
    """
    _check_speed(r)
    chunking = chunking or ChunkPolicy()
    cr = model.config.compression_ratio
    n = len(x)
    target = max(1, int(np.floor(n / r + 0.5)))

    if n <= chunking.chunk_len:
        latent = model.encode(x)
    else:
        overlap = chunking.latent_overlap
        chunk_steps = max(chunking.chunk_len // cr, overlap + 1)
        chunk_len = chunk_steps * cr
        stride = chunk_len - overlap * cr
        # chunk starts stay on the latent grid; a final sliver too short to
        # overlap (or to encode) is folded into the previous chunk instead
        starts = [
            s for s in range(0, n, stride) if s == 0 or n - s >= max(cr, overlap * cr + 1)
        ]
        pieces = []
        for i, s in enumerate(starts):
            end = s + chunk_len if i < len(starts) - 1 else n
            piece = Waveform(x.samples[s:end], x.sample_rate)
            pieces.append(model.encode(piece).values)
        latent = Latent(_merge_latents(pieces, overlap), cr)

    decoded = model.decode(scale_latent(latent, r))
    y = decoded.samples
    if y.size < target:
        y = np.pad(y, (0, target - y.size))
    return Waveform(y[:target], x.sample_rate)


def resample_stretch(x: Waveform, r: float) -> Waveform:
    """Naive control: change duration by plain resampling.

    Frequencies scale with r (a 440 Hz tone played at r=2 comes out at
    880 Hz), which is exactly the artifact time-scale modification
    exists to avoid.
    """
    _check_speed(r)
    if r == 1.0:
        return Waveform(x.samples.copy(), x.sample_rate)
    lowered = resample(x, max(1, round(x.sample_rate / r)))
    return Waveform(lowered.samples, x.sample_rate)
