"""Multi-scale waveform discriminators and the adversarial losses.

Three identical discriminators look at the waveform, its 2x and its 4x
average-pooled versions.  Training uses the hinge GAN objective plus a
feature-matching term over every discriminator layer, weighted by
FEATURE_MATCH_WEIGHT.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .model import calibrate_chain, wn_conv1d

NUM_SCALES = 3
FEATURE_MATCH_WEIGHT = 10.0

# Minimum input length for one patch logit: the four stride-4 stages.
MIN_INPUT = 4**4


@dataclass
class DiscriminatorOutput:
    """Patch logits plus every intermediate layer's activation map."""

    logits: torch.Tensor
    feature_maps: list[torch.Tensor]


class ScaleDiscriminator(nn.Module):
    """Single-scale patch discriminator.

    Body: kernel-15 input conv, four grouped stride-4 kernel-41 convs
    (channels 16 -> 64 -> 256 -> 1024 -> 1024 at the default width),
    a kernel-5 conv and a kernel-3 conv down to one logit channel, with
    leaky rectification between layers.  One logit per 256 input samples.
    """

    def __init__(self, base_channels: int = 16, max_channels: int = 1024, leaky_slope: float = 0.2):
        super().__init__()
        self.layers = nn.ModuleList()
        self.layers.append(
            nn.Sequential(nn.ReflectionPad1d(7), wn_conv1d(1, base_channels, kernel_size=15))
        )
        ch = base_channels
        for _ in range(4):
            ch_next = min(ch * 4, max_channels)
            self.layers.append(
                wn_conv1d(ch, ch_next, kernel_size=41, stride=4, padding=20, groups=4)
            )
            ch = ch_next
        self.layers.append(wn_conv1d(ch, ch, kernel_size=5, padding=2))
        self.layers.append(wn_conv1d(ch, 1, kernel_size=3, padding=1))
        self.activation = nn.LeakyReLU(leaky_slope)
        self._calibrate()

    @torch.no_grad()
    def _calibrate(self):
        h = torch.randn(1, 1, 4096)
        for i, layer in enumerate(self.layers):
            h = calibrate_chain([layer], h, final_conv=None, final_target=1.0)
            if i < len(self.layers) - 1:
                h = self.activation(h)

    def forward(self, x: torch.Tensor) -> DiscriminatorOutput:
        features = []
        for i, layer in enumerate(self.layers):
            x = layer(x)
            features.append(x)
            if i < len(self.layers) - 1:
                x = self.activation(x)
        return DiscriminatorOutput(logits=features[-1], feature_maps=features)


class MultiScaleDiscriminator(nn.Module):
    """Three scale discriminators over progressively pooled input."""

    def __init__(self, base_channels: int = 16, max_channels: int = 1024, leaky_slope: float = 0.2):
        super().__init__()
        self.discriminators = nn.ModuleList(
            ScaleDiscriminator(base_channels, max_channels, leaky_slope)
            for _ in range(NUM_SCALES)
        )
        self.pool = nn.AvgPool1d(
            kernel_size=4, stride=2, padding=1, ceil_mode=True, count_include_pad=False
        )

    def pooled_input(self, x: torch.Tensor, scale: int) -> torch.Tensor:
        """Input as seen by `scale` (1-based): pooled scale - 1 times."""
        for _ in range(scale - 1):
            x = self.pool(x)
        return x

    def forward_scale(self, x: torch.Tensor, scale: int) -> DiscriminatorOutput:
        if not 1 <= scale <= NUM_SCALES:
            raise ValueError(f"scale must be in 1..{NUM_SCALES}, got {scale}")
        pooled = self.pooled_input(x, scale)
        if pooled.shape[-1] < MIN_INPUT:
            raise ValueError(
                f"input ({pooled.shape[-1]} samples at scale {scale}) shorter than "
                f"the discriminator receptive field ({MIN_INPUT})"
            )
        return self.discriminators[scale - 1](pooled)

    def forward(self, x: torch.Tensor) -> list[DiscriminatorOutput]:
        return [self.forward_scale(x, k) for k in range(1, NUM_SCALES + 1)]


def feature_matching_loss(a: DiscriminatorOutput, b: DiscriminatorOutput) -> torch.Tensor:
    """Sum over layers of the per-unit L1 distance between feature maps."""
    if len(a.feature_maps) != len(b.feature_maps):
        raise ValueError("feature map counts differ")
    total = None
    for fa, fb in zip(a.feature_maps, b.feature_maps):
        if fa.shape != fb.shape:
            raise ValueError(f"feature map shapes differ: {tuple(fa.shape)} vs {tuple(fb.shape)}")
        term = (fa - fb).abs().mean()
        total = term if total is None else total + term
    return total


def hinge_d_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    """Discriminator hinge loss for one scale:
    mean(relu(1 - D(x))) + mean(relu(1 + D(x_hat)))."""
    return torch.relu(1.0 - real_logits).mean() + torch.relu(1.0 + fake_logits).mean()


def hinge_g_loss(fake_logits: torch.Tensor) -> torch.Tensor:
    """Generator adversarial hinge loss for one scale: -mean(D(x_hat))."""
    return -fake_logits.mean()


def discriminator_loss(real: list[DiscriminatorOutput], fake: list[DiscriminatorOutput]) -> torch.Tensor:
    """Hinge loss summed over all scales."""
    return sum(hinge_d_loss(r.logits, f.logits) for r, f in zip(real, fake))


def generator_loss(
    real: list[DiscriminatorOutput],
    fake: list[DiscriminatorOutput],
    feature_weight: float = FEATURE_MATCH_WEIGHT,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Adversarial + weighted feature-matching loss over all scales.

    Returns (total, adversarial part, feature-matching part).
    """
    adv = sum(hinge_g_loss(f.logits) for f in fake)
    fm = sum(feature_matching_loss(r, f) for r, f in zip(real, fake))
    return adv + feature_weight * fm, adv, fm
