"""Objective evaluation and timing harness.

Quality is scored with reference-relative proxies (duration error,
FFT-peak pitch error, reconstruction SNR) on a synthetic corpus or any
WAV directory; timing is reported as milliseconds of wall clock per
second of input audio.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .audio import Waveform
from .dsp import hann
from .engine import speed_grid, stretch
from .model import Autoencoder

PITCH_FFT_SIZE = 8192
SILENCE_DBFS = -60.0

CSV_COLUMNS = [
    "method",
    "sample",
    "speed",
    "duration_error_pct",
    "pitch_error_pct",
    "snr_db",
    "ms_per_audio_sec",
    "flags",
]

StretchFn = Callable[[Waveform, float], Waveform]


def dominant_frequency(w: Waveform, fft_size: int = PITCH_FFT_SIZE) -> float | None:
    """Dominant frequency via a Hann-windowed FFT over a mid-signal
    window, refined by quadratic peak interpolation.

    Returns None when the strongest component sits below -60 dBFS
    (silence), where the estimate would be meaningless.
    """
    x = w.samples
    if x.size >= fft_size:
        start = (x.size - fft_size) // 2
        seg = x[start : start + fft_size]
        win = hann(fft_size)
    else:
        seg = x
        win = hann(x.size) if x.size >= 2 else np.ones(x.size)
    mags = np.abs(np.fft.rfft(seg * win, n=fft_size))
    if mags.size < 3:
        return None
    k = 1 + int(np.argmax(mags[1:]))  # skip DC
    # full-scale reference: amplitude-1 sine under a Hann window
    full_scale = win.sum() / 2.0
    if mags[k] <= full_scale * 10.0 ** (SILENCE_DBFS / 20.0):
        return None
    delta = 0.0
    if 1 <= k < mags.size - 1 and mags[k - 1] > 0 and mags[k + 1] > 0:
        a, b, c = np.log(mags[k - 1]), np.log(mags[k]), np.log(mags[k + 1])
        denom = a - 2.0 * b + c
        if denom != 0.0:
            delta = float(np.clip(0.5 * (a - c) / denom, -0.5, 0.5))
    return (k + delta) * w.sample_rate / fft_size


def pitch_error(reference: Waveform, test: Waveform) -> float | None:
    """Relative dominant-frequency error in percent; None if either side
    is silent (such rows are flagged and excluded from aggregates)."""
    f_ref = dominant_frequency(reference)
    f_test = dominant_frequency(test)
    if f_ref is None or f_test is None:
        return None
    return abs(f_test - f_ref) / f_ref * 100.0


def duration_error_pct(n_in: int, n_out: int, speed: float) -> float:
    """|len_out - round(len_in / r)| / (len_in / r) * 100."""
    expected = n_in / speed
    return abs(n_out - int(np.floor(expected + 0.5))) / expected * 100.0


def snr_db(reference: Waveform, test: Waveform) -> float:
    """Signal-to-noise ratio of `test` against an aligned reference."""
    n = min(len(reference), len(test))
    ref = reference.samples[:n]
    err = ref - test.samples[:n]
    p_sig = float(np.sum(ref * ref))
    p_err = float(np.sum(err * err))
    if p_err == 0.0:
        return math.inf
    return 10.0 * math.log10(p_sig / max(p_err, 1e-300))


@dataclass
class EvalReport:
    """Per-sample rows plus per-(method, speed) aggregate means."""

    rows: list[dict] = field(default_factory=list)

    def add(self, **row) -> None:
        self.rows.append(row)

    def aggregate(self) -> dict:
        groups: dict[tuple, dict[str, list]] = {}
        for row in self.rows:
            key = (row["method"], row.get("speed"))
            bucket = groups.setdefault(key, {})
            for metric in ("duration_error_pct", "pitch_error_pct", "snr_db", "ms_per_audio_sec"):
                value = row.get(metric)
                if value is not None and np.isfinite(value):
                    bucket.setdefault(metric, []).append(float(value))
        out = {}
        for (method, speed), bucket in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1] or 0)):
            entry = {metric: sum(vals) / len(vals) for metric, vals in bucket.items()}
            out[f"{method}@{speed}" if speed is not None else method] = entry
        return out

    def method_means(self, metric: str) -> dict[str, float]:
        per_method: dict[str, list[float]] = {}
        for row in self.rows:
            value = row.get(metric)
            if value is not None and np.isfinite(value):
                per_method.setdefault(row["method"], []).append(float(value))
        return {m: sum(v) / len(v) for m, v in per_method.items()}

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS, extrasaction="ignore")
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: row.get(k, "") for k in CSV_COLUMNS})

    def write_json(self, path) -> None:
        with open(Path(path), "w") as f:
            json.dump({"aggregates": self.aggregate(), "n_rows": len(self.rows)}, f, indent=2)

    def write_plot_data(self, path, metric: str = "pitch_error_pct") -> None:
        """gnuplot-style columns: speed then one column per method."""
        methods = sorted({row["method"] for row in self.rows})
        speeds = sorted({row["speed"] for row in self.rows if row.get("speed") is not None})
        cells: dict[tuple, list[float]] = {}
        for row in self.rows:
            value = row.get(metric)
            if row.get("speed") is not None and value is not None and np.isfinite(value):
                cells.setdefault((row["method"], row["speed"]), []).append(float(value))
        with open(Path(path), "w") as f:
            f.write("# speed " + " ".join(methods) + "\n")
            for speed in speeds:
                vals = []
                for m in methods:
                    bucket = cells.get((m, speed))
                    vals.append(f"{sum(bucket) / len(bucket):.6g}" if bucket else "nan")
                f.write(f"{speed} " + " ".join(vals) + "\n")


def synthetic_corpus(sample_rate: int = 22050, duration: float = 1.0) -> dict[str, Waveform]:
    """Deterministic evaluation clips: tones, a two-tone, a chirp and
    noise bursts."""
    n = int(round(sample_rate * duration))
    t = np.arange(n) / sample_rate
    rng = np.random.default_rng(1234)
    burst = rng.uniform(-0.5, 0.5, n)
    gate = (np.sin(2.0 * np.pi * 4.0 * t) > 0).astype(float)
    clips = {
        "sine440": 0.8 * np.sin(2.0 * np.pi * 440.0 * t),
        "two_tone": 0.45 * np.sin(2.0 * np.pi * 440.0 * t) + 0.35 * np.sin(2.0 * np.pi * 660.0 * t),
        "chirp": 0.8 * np.sin(2.0 * np.pi * (200.0 * t + 0.5 * (2000.0 - 200.0) / duration * t * t)),
        "noise_bursts": burst * gate,
    }
    return {name: Waveform(x, sample_rate) for name, x in clips.items()}


def evaluate_methods(
    methods: Mapping[str, StretchFn],
    corpus: Mapping[str, Waveform],
    speeds: Sequence[float],
    pitch_invariant: bool = True,
) -> EvalReport:
    """Run every method over corpus x speeds and score duration/pitch.

    `pitch_invariant` scores pitch against the unstretched input, which
    is the contract for every method except the resample control.
    """
    report = EvalReport()
    for method, fn in methods.items():
        for sample, wave in corpus.items():
            for speed in speeds:
                out = fn(wave, speed)
                p_err = pitch_error(wave, out) if pitch_invariant else None
                report.add(
                    method=method,
                    sample=sample,
                    speed=speed,
                    duration_error_pct=duration_error_pct(len(wave), len(out), speed),
                    pitch_error_pct=p_err,
                    snr_db=None,
                    ms_per_audio_sec=None,
                    flags="silent" if p_err is None and pitch_invariant else "",
                )
    return report


def bench_inference(
    methods: Mapping[str, StretchFn],
    corpus: Mapping[str, Waveform],
    speeds: Sequence[float] = (1.5,),
    repetitions: int = 5,
    warmup: int = 1,
) -> EvalReport:
    """Wall-clock timing: median over `repetitions` runs (after warm-up),
    reported as ms per second of input audio."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    report = EvalReport()
    for method, fn in methods.items():
        for sample, wave in corpus.items():
            for speed in speeds:
                for _ in range(warmup):
                    fn(wave, speed)
                elapsed = []
                for _ in range(repetitions):
                    t0 = time.perf_counter()
                    fn(wave, speed)
                    elapsed.append(time.perf_counter() - t0)
                ms_per_sec = float(np.median(elapsed)) * 1000.0 / wave.duration
                report.add(
                    method=method,
                    sample=sample,
                    speed=speed,
                    duration_error_pct=None,
                    pitch_error_pct=None,
                    snr_db=None,
                    ms_per_audio_sec=ms_per_sec,
                    flags="",
                )
    return report


def cr_ablation(
    models: Mapping[int, Autoencoder],
    tone_freqs: Sequence[float] = (110.0, 440.0, 1760.0),
    speeds: Sequence[float] | None = None,
    duration: float = 1.0,
) -> EvalReport:
    """Pitch error per compression ratio per speed on pure tones.

    Lower ratios pack fewer waveform periods into one latent step, so
    pitch shifts creep in at low frequencies first; rows are labelled
    cr<ratio> to make that comparison direct.
    """
    speeds = list(speeds) if speeds is not None else speed_grid()
    report = EvalReport()
    for cr, model in sorted(models.items()):
        sr = model.config.sample_rate
        t = np.arange(int(round(sr * duration))) / sr
        for freq in tone_freqs:
            tone = Waveform(0.8 * np.sin(2.0 * np.pi * freq * t), sr)
            for speed in speeds:
                out = stretch(tone, speed, model)
                p_err = pitch_error(tone, out)
                report.add(
                    method=f"cr{cr}",
                    sample=f"tone{freq:g}",
                    speed=speed,
                    duration_error_pct=duration_error_pct(len(tone), len(out), speed),
                    pitch_error_pct=p_err,
                    snr_db=None,
                    ms_per_audio_sec=None,
                    flags="silent" if p_err is None else "",
                )
    return report
