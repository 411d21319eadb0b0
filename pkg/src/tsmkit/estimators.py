"""Scikit-learn style estimators wrapping the stretch algorithms.

Each stretcher is a transformer: `transform` maps a waveform (or 1-D
sample array at `sample_rate`) to its time-scaled version.  Parameters
follow sklearn conventions (stored verbatim in __init__, validated at
use), so `get_params` / `set_params` / `clone` and pipeline composition
work as usual.  `NeuralStretcher.fit` runs adversarial training.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import classical
from .audio import CANONICAL_RATE, Waveform, resample
from .checkpoint import load_autoencoder
from .engine import ChunkPolicy, resample_stretch, stretch
from .model import ModelConfig
from .training import SegmentSampler, TrainConfig, Trainer
from .validation import check_speed, ensure_waveform


class _BaseStretcher(TransformerMixin, BaseEstimator):
    """Common transform plumbing: waveform coercion and output kind."""

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        w, was_array = ensure_waveform(X, self.sample_rate)
        out = self._stretch(w)
        return out.samples if was_array else out

    def _stretch(self, w: Waveform) -> Waveform:  # pragma: no cover - abstract
        raise NotImplementedError


class OlaStretcher(_BaseStretcher):
    """Plain overlap-add time stretcher (no frame realignment)."""

    def __init__(
        self,
        speed: float = 1.0,
        frame_len: int = classical.WSOLA_FRAME_LEN,
        synthesis_hop: int = classical.DEFAULT_SYNTHESIS_HOP,
        sample_rate: int = CANONICAL_RATE,
    ):
        self.speed = speed
        self.frame_len = frame_len
        self.synthesis_hop = synthesis_hop
        self.sample_rate = sample_rate

    def _params(self) -> classical.TsmParams:
        return classical.TsmParams(
            speed=check_speed(self.speed),
            frame_len=self.frame_len,
            synthesis_hop=self.synthesis_hop,
            tolerance=0,
        )

    def _stretch(self, w: Waveform) -> Waveform:
        return classical.ola_stretch(w, self._params())


class WsolaStretcher(_BaseStretcher):
    """Waveform-similarity overlap-add stretcher."""

    def __init__(
        self,
        speed: float = 1.0,
        frame_len: int = classical.WSOLA_FRAME_LEN,
        synthesis_hop: int = classical.DEFAULT_SYNTHESIS_HOP,
        tolerance: int = classical.DEFAULT_TOLERANCE,
        sample_rate: int = CANONICAL_RATE,
    ):
        self.speed = speed
        self.frame_len = frame_len
        self.synthesis_hop = synthesis_hop
        self.tolerance = tolerance
        self.sample_rate = sample_rate

    def _stretch(self, w: Waveform) -> Waveform:
        params = classical.TsmParams(
            speed=check_speed(self.speed),
            frame_len=self.frame_len,
            synthesis_hop=self.synthesis_hop,
            tolerance=self.tolerance,
        )
        return classical.wsola_stretch(w, params)


class PhaseVocoderStretcher(_BaseStretcher):
    """STFT phase-vocoder stretcher; `phase_lock` enables identity
    phase locking around spectral peaks."""

    def __init__(
        self,
        speed: float = 1.0,
        frame_len: int = classical.PV_FRAME_LEN,
        synthesis_hop: int = classical.DEFAULT_SYNTHESIS_HOP,
        phase_lock: bool = False,
        sample_rate: int = CANONICAL_RATE,
    ):
        self.speed = speed
        self.frame_len = frame_len
        self.synthesis_hop = synthesis_hop
        self.phase_lock = phase_lock
        self.sample_rate = sample_rate

    def _stretch(self, w: Waveform) -> Waveform:
        params = classical.TsmParams(
            speed=check_speed(self.speed),
            frame_len=self.frame_len,
            synthesis_hop=self.synthesis_hop,
            tolerance=0,
            phase_lock=self.phase_lock,
        )
        return classical.pv_stretch(w, params)


class ResampleStretcher(_BaseStretcher):
    """Naive resampling control: changes duration and pitch together."""

    def __init__(self, speed: float = 1.0, sample_rate: int = CANONICAL_RATE):
        self.speed = speed
        self.sample_rate = sample_rate

    def _stretch(self, w: Waveform) -> Waveform:
        return resample_stretch(w, check_speed(self.speed))


class NeuralStretcher(_BaseStretcher):
    """Latent-interpolation stretcher backed by the autoencoder.

    Either load a trained model (`checkpoint=` path or `from_model`) or
    call `fit` on a WAV directory / list of waveforms to train one.
    """

    def __init__(
        self,
        speed: float = 1.0,
        checkpoint: str | None = None,
        compression_ratio: int = 1024,
        steps: int = 1000,
        segment_len: int = 16384,
        batch_size: int = 8,
        lr_generator: float = 1e-4,
        lr_discriminator: float = 1e-4,
        seed: int = 0,
        base_channels: int = 32,
        max_channels: int = 512,
        latent_channels: int = 64,
        disc_base_channels: int = 16,
        disc_max_channels: int = 1024,
        chunk_len: int = 220500,
        auto_resample: bool = False,
        sample_rate: int = CANONICAL_RATE,
    ):
        self.speed = speed
        self.checkpoint = checkpoint
        self.compression_ratio = compression_ratio
        self.steps = steps
        self.segment_len = segment_len
        self.batch_size = batch_size
        self.lr_generator = lr_generator
        self.lr_discriminator = lr_discriminator
        self.seed = seed
        self.base_channels = base_channels
        self.max_channels = max_channels
        self.latent_channels = latent_channels
        self.disc_base_channels = disc_base_channels
        self.disc_max_channels = disc_max_channels
        self.chunk_len = chunk_len
        self.auto_resample = auto_resample
        self.sample_rate = sample_rate

    @classmethod
    def from_model(cls, model, **params) -> "NeuralStretcher":
        est = cls(**params)
        est.model_ = model
        return est

    def _model_config(self) -> ModelConfig:
        return ModelConfig.preset(
            self.compression_ratio,
            base_channels=self.base_channels,
            max_channels=self.max_channels,
            latent_channels=self.latent_channels,
            sample_rate=self.sample_rate,
        )

    def fit(self, X, y=None):
        """Train the autoencoder on X (a WAV directory path, a list of
        Waveforms, or a list of 1-D arrays at `sample_rate`)."""
        cfg = TrainConfig(
            model=self._model_config(),
            steps=self.steps,
            segment_len=self.segment_len,
            batch_size=self.batch_size,
            lr_generator=self.lr_generator,
            lr_discriminator=self.lr_discriminator,
            seed=self.seed,
            disc_base_channels=self.disc_base_channels,
            disc_max_channels=self.disc_max_channels,
            checkpoint_every=max(1, self.steps),
        )
        if isinstance(X, (str, bytes)) or hasattr(X, "__fspath__"):
            sampler = SegmentSampler.from_dir(
                X, self.segment_len, self.batch_size, seed=self.seed, sample_rate=self.sample_rate
            )
        else:
            waves = [
                w if isinstance(w, Waveform) else Waveform(np.asarray(w), self.sample_rate)
                for w in X
            ]
            sampler = SegmentSampler(waves, self.segment_len, self.batch_size, seed=self.seed)
        trainer = Trainer(cfg, sampler=sampler)
        trainer.run()
        trainer.autoencoder.eval()
        self.model_ = trainer.autoencoder
        self.trainer_ = trainer
        return self

    def _resolve_model(self):
        if not hasattr(self, "model_"):
            if self.checkpoint is None:
                raise NotFittedError(
                    "NeuralStretcher needs fit(), from_model(), or a checkpoint path"
                )
            self.model_ = load_autoencoder(self.checkpoint)
        return self.model_

    def _stretch(self, w: Waveform) -> Waveform:
        model = self._resolve_model()
        if w.sample_rate != model.config.sample_rate and self.auto_resample:
            w = resample(w, model.config.sample_rate)
        return stretch(w, check_speed(self.speed), model, ChunkPolicy(chunk_len=self.chunk_len))
