"""tsmkit: audio time-scale modification toolkit.

Classical stretchers (OLA, WSOLA, phase vocoder), a neural stretcher
that interpolates a learned latent representation, adversarial training
for the latter, and an objective evaluation harness.
"""
from .audio import CANONICAL_RATE, AudioIOError, Waveform, load_wav, resample, write_wav
from .classical import TsmParams, ola_stretch, pv_stretch, wsola_stretch
from .checkpoint import Checkpoint, CheckpointError, load_autoencoder, load_checkpoint, save_checkpoint
from .engine import ChunkPolicy, resample_stretch, scale_latent, speed_grid, stretch
from .estimators import (
    NeuralStretcher,
    OlaStretcher,
    PhaseVocoderStretcher,
    ResampleStretcher,
    WsolaStretcher,
)
from .model import Autoencoder, Latent, ModelConfig, SampleRateMismatch
from .training import SegmentSampler, TrainConfig, Trainer, TrainMetrics, detect_divergence, ingest_dataset

__version__ = "0.1.0"

__all__ = [
    "AudioIOError",
    "Autoencoder",
    "CANONICAL_RATE",
    "Checkpoint",
    "CheckpointError",
    "ChunkPolicy",
    "Latent",
    "ModelConfig",
    "NeuralStretcher",
    "OlaStretcher",
    "PhaseVocoderStretcher",
    "ResampleStretcher",
    "SampleRateMismatch",
    "SegmentSampler",
    "TrainConfig",
    "Trainer",
    "TrainMetrics",
    "TsmParams",
    "Waveform",
    "WsolaStretcher",
    "detect_divergence",
    "ingest_dataset",
    "load_autoencoder",
    "load_checkpoint",
    "load_wav",
    "ola_stretch",
    "pv_stretch",
    "resample",
    "resample_stretch",
    "save_checkpoint",
    "scale_latent",
    "speed_grid",
    "stretch",
    "wsola_stretch",
    "write_wav",
]
