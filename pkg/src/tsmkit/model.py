"""Strided 1-D convolutional autoencoder over raw waveforms.

The encoder compresses audio by the stride product (the compression
ratio, CR) into a bounded latent map of shape (channels, T); the decoder
mirrors it with transposed convolutions.  Kernel sizes on all resampling
convolutions are twice the stride, which avoids checkerboard artifacts,
and every convolution is weight-normalized.  Length-preserving convs use
replication padding, which stays defined even at latent length 1.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .audio import Waveform

# Stride schedules (decoder order) for the supported compression ratios.
# Lower ratios drop trailing stages, so model depth grows with CR.
CR_PRESETS = {
    256: (8, 8, 4),
    512: (8, 8, 4, 2),
    1024: (8, 8, 4, 2, 2),
}


class SampleRateMismatch(ValueError):
    """Audio sample rate does not match the model's expected rate."""


@dataclass
class ModelConfig:
    """Architecture hyperparameters for the autoencoder."""

    stride_schedule: tuple[int, ...] = (8, 8, 4, 2, 2)
    base_channels: int = 32
    max_channels: int = 512
    latent_channels: int = 64
    leaky_slope: float = 0.2
    residual_dilations: tuple[int, ...] = (1, 3, 9)
    sample_rate: int = 22050

    def __post_init__(self):
        self.stride_schedule = tuple(int(s) for s in self.stride_schedule)
        self.residual_dilations = tuple(int(d) for d in self.residual_dilations)
        if not self.stride_schedule:
            raise ValueError("stride_schedule must not be empty")
        for s in self.stride_schedule:
            if s <= 0 or s % 2:
                raise ValueError(f"strides must be positive and even, got {s}")
        for name in ("base_channels", "max_channels", "latent_channels", "sample_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def compression_ratio(self) -> int:
        return math.prod(self.stride_schedule)

    def encoder_channels(self) -> list[int]:
        """Channel count entering each encoder stage, doubling up to the cap."""
        chans = [self.base_channels]
        for _ in self.stride_schedule:
            chans.append(min(chans[-1] * 2, self.max_channels))
        return chans

    @classmethod
    def preset(cls, compression_ratio: int, **overrides) -> "ModelConfig":
        if compression_ratio not in CR_PRESETS:
            raise ValueError(
                f"unsupported compression ratio {compression_ratio}; "
                f"choose one of {sorted(CR_PRESETS)}"
            )
        return cls(stride_schedule=CR_PRESETS[compression_ratio], **overrides)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class Latent:
    """Temporally compressed representation: (channels, T) real values
    in (-1, 1), one time step per `compression_ratio` input samples."""

    values: np.ndarray
    compression_ratio: int

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValueError(f"latent must be 2-D (channels, time), got {self.values.shape}")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def steps(self) -> int:
        return self.values.shape[1]


def wn_conv1d(*args, **kwargs) -> nn.Conv1d:
    conv = nn.Conv1d(*args, **kwargs)
    return _init_and_normalize(conv)


def wn_conv_transpose1d(*args, **kwargs) -> nn.ConvTranspose1d:
    conv = nn.ConvTranspose1d(*args, **kwargs)
    return _init_and_normalize(conv)


def _init_and_normalize(conv: nn.Module) -> nn.Module:
    # fan-in-scaled weights (torch's default conv init) keep unit-order
    # signal through deep stacks; g starts at the weight norm
    if conv.bias is not None:
        nn.init.zeros_(conv.bias)
    out_dim = 1 if isinstance(conv, nn.ConvTranspose1d) else 0
    with warnings.catch_warnings():
        # the legacy wrapper keeps the flat weight_g/weight_v parameter
        # names our checkpoint format relies on
        warnings.simplefilter("ignore", FutureWarning)
        warnings.simplefilter("ignore", UserWarning)
        warnings.simplefilter("ignore", DeprecationWarning)
        return nn.utils.weight_norm(conv, dim=out_dim)


class ResidualUnit(nn.Module):
    """Dilated conv block with a 1x1 shortcut (MelGAN-style)."""

    def __init__(self, channels: int, dilation: int, leaky_slope: float):
        super().__init__()
        self.block = nn.Sequential(
            nn.LeakyReLU(leaky_slope),
            nn.ReplicationPad1d(dilation),
            wn_conv1d(channels, channels, kernel_size=3, dilation=dilation),
            nn.LeakyReLU(leaky_slope),
            wn_conv1d(channels, channels, kernel_size=1),
        )
        self.shortcut = wn_conv1d(channels, channels, kernel_size=1)

    def forward(self, x):
        return self.shortcut(x) + self.block(x)


def _is_wn_conv(module: nn.Module) -> bool:
    return isinstance(module, (nn.Conv1d, nn.ConvTranspose1d)) and hasattr(module, "weight_g")


@torch.no_grad()
def _scale_gain(conv: nn.Module, h: torch.Tensor, target: float) -> torch.Tensor:
    """Rescale a weight-normalized conv's gain so its output std hits
    `target`, then return that output."""
    out = conv(h)
    std = float(out.std())
    if std > 0.0 and math.isfinite(std):
        conv.weight_g.mul_(target / std)
        out = conv(h)
    return out


@torch.no_grad()
def calibrate_chain(modules, h: torch.Tensor, final_conv=None, final_target: float = 0.5) -> torch.Tensor:
    """Walk layers in forward order, retuning every conv gain so a
    unit-variance probe keeps unit variance (LSUV-style).

    Deep stacks otherwise shrink signals multiplicatively until float32
    underflow, where Adam's epsilon freezes training.  Residual units
    split the variance budget between shortcut and block so their sum
    stays calibrated.  `final_conv` (the conv feeding a bounding tanh)
    aims at `final_target` instead of 1.
    """
    for module in modules:
        if isinstance(module, ResidualUnit):
            branch_target = float(h.std()) / math.sqrt(2.0)
            hb = h
            for child in module.block:
                if _is_wn_conv(child):
                    target = branch_target if child is module.block[-1] else 1.0
                    hb = _scale_gain(child, hb, target)
                else:
                    hb = child(hb)
            _scale_gain(module.shortcut, h, branch_target)
            h = module(h)
        elif isinstance(module, nn.Sequential):
            h = calibrate_chain(list(module), h, final_conv, final_target)
        elif _is_wn_conv(module):
            h = _scale_gain(module, h, final_target if module is final_conv else 1.0)
        else:
            h = module(h)
    return h


def _residual_stack(channels: int, cfg: ModelConfig) -> list[nn.Module]:
    return [ResidualUnit(channels, d, cfg.leaky_slope) for d in cfg.residual_dilations]


class Encoder(nn.Module):
    """Waveform -> latent map.  Stages run in reverse stride order so the
    decoder can mirror them; channels double per stage up to the cap."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        chans = cfg.encoder_channels()
        layers: list[nn.Module] = [
            nn.ReplicationPad1d(3),
            wn_conv1d(1, chans[0], kernel_size=7),
        ]
        for i, stride in enumerate(reversed(cfg.stride_schedule)):
            layers += [
                nn.LeakyReLU(cfg.leaky_slope),
                wn_conv1d(
                    chans[i],
                    chans[i + 1],
                    kernel_size=2 * stride,
                    stride=stride,
                    padding=stride // 2,
                ),
            ]
            layers += _residual_stack(chans[i + 1], cfg)
        final = wn_conv1d(chans[-1], cfg.latent_channels, kernel_size=7)
        layers += [
            nn.LeakyReLU(cfg.leaky_slope),
            nn.ReplicationPad1d(3),
            final,
            nn.Tanh(),
        ]
        self.layers = nn.Sequential(*layers)
        probe = torch.randn(1, 1, 8 * cfg.compression_ratio)
        calibrate_chain(list(self.layers), probe, final_conv=final, final_target=0.5)

    def forward(self, x):
        return self.layers(x)


class Decoder(nn.Module):
    """Latent map -> waveform, mirroring the encoder with transposed
    convolutions; output is tanh-bounded."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        chans = list(reversed(cfg.encoder_channels()))
        layers: list[nn.Module] = [
            nn.ReplicationPad1d(3),
            wn_conv1d(cfg.latent_channels, chans[0], kernel_size=7),
        ]
        for i, stride in enumerate(cfg.stride_schedule):
            layers += [
                nn.LeakyReLU(cfg.leaky_slope),
                wn_conv_transpose1d(
                    chans[i],
                    chans[i + 1],
                    kernel_size=2 * stride,
                    stride=stride,
                    padding=stride // 2,
                ),
            ]
            layers += _residual_stack(chans[i + 1], cfg)
        final = wn_conv1d(chans[-1], 1, kernel_size=7)
        layers += [
            nn.LeakyReLU(cfg.leaky_slope),
            nn.ReplicationPad1d(3),
            final,
            nn.Tanh(),
        ]
        self.layers = nn.Sequential(*layers)
        probe = 0.5 * torch.randn(1, cfg.latent_channels, 8)
        calibrate_chain(list(self.layers), probe, final_conv=final, final_target=0.5)

    def forward(self, x):
        return self.layers(x)


class Autoencoder(nn.Module):
    """Encoder/decoder pair plus the Waveform <-> Latent glue."""

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        self.encoder = Encoder(self.config)
        self.decoder = Decoder(self.config)

    def forward(self, x):
        """(B, 1, L) -> (B, 1, L); L must be a multiple of the CR."""
        return self.decoder(self.encoder(x))

    def latent_steps(self, n_samples: int) -> int:
        return -(-n_samples // self.config.compression_ratio)

    def _check_rate(self, w: Waveform) -> None:
        if w.sample_rate != self.config.sample_rate:
            raise SampleRateMismatch(
                f"model expects {self.config.sample_rate} Hz, got {w.sample_rate} Hz"
            )

    @torch.no_grad()
    def encode(self, w: Waveform) -> Latent:
        """Encode a waveform into ceil(len / CR) latent steps.

        The input is reflection-padded up to a multiple of the CR, so the
        waveform must be at least CR samples long.
        """
        self._check_rate(w)
        cr = self.config.compression_ratio
        if len(w) < cr:
            raise ValueError(f"input ({len(w)} samples) shorter than one latent window ({cr})")
        pad = (-len(w)) % cr
        x = torch.from_numpy(w.samples).float().view(1, 1, -1)
        if pad:
            x = F.pad(x, (0, pad), mode="reflect")
        values = self.encoder(x)[0].numpy()
        return Latent(values, cr)

    @torch.no_grad()
    def decode(self, latent: Latent) -> Waveform:
        """Decode a latent map into steps * CR samples."""
        cr = self.config.compression_ratio
        if latent.compression_ratio != cr:
            raise ValueError(
                f"latent compression ratio {latent.compression_ratio} "
                f"does not match model ({cr})"
            )
        if latent.channels != self.config.latent_channels:
            raise ValueError(
                f"latent has {latent.channels} channels, model expects "
                f"{self.config.latent_channels}"
            )
        g = torch.from_numpy(np.ascontiguousarray(latent.values)).float().unsqueeze(0)
        y = self.decoder(g)[0, 0].numpy()
        return Waveform(y.astype(np.float64), self.config.sample_rate)

    @torch.no_grad()
    def reconstruct(self, w: Waveform) -> Waveform:
        """Round trip through the autoencoder, trimmed to the input length."""
        y = self.decode(self.encode(w))
        return Waveform(y.samples[: len(w)], w.sample_rate)
