"""Input validation helpers shared by the estimator API."""
from __future__ import annotations

import numpy as np

from .audio import Waveform


def ensure_waveform(X, sample_rate: int) -> tuple[Waveform, bool]:
    """Coerce estimator input to a Waveform.

    Accepts a Waveform (its own rate wins) or a 1-D array-like taken to
    be at `sample_rate`.  Returns (waveform, was_array) so transforms can
    hand back the same kind of object they were given.
    """
    if isinstance(X, Waveform):
        return X, False
    x = np.asarray(X, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a Waveform or 1-D sample array, got shape {x.shape}")
    if x.size < 1:
        raise ValueError("empty input")
    return Waveform(x, sample_rate), True


def check_speed(speed, lo: float = 0.25, hi: float = 4.0) -> float:
    speed = float(speed)
    if not np.isfinite(speed) or not lo <= speed <= hi:
        raise ValueError(f"speed must be a finite value in [{lo}, {hi}], got {speed}")
    return speed


def check_positive_int(value, name: str) -> int:
    ivalue = int(value)
    if ivalue <= 0:
        raise ValueError(f"{name} must be a positive integer, got {value}")
    return ivalue
