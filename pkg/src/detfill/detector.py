"""Fully convolutional pixel-wise artifact detector.

Seven learned layers (base_channels=64, RGB input). The first five convs
down-sample twice in total (strides 2, 2, 1, 1, 1); two deconvs bring the
map back to input resolution; a per-pixel 2-way softmax turns the final
2-channel logits into probabilities. Channel 0 scores "clean", channel 1
scores "artifact"; the valuation map V is the artifact probability.

    conv   k4 s2   3 ->  64     weight (64, 3, 4, 4)
    conv   k4 s2  64 -> 128     weight (128, 64, 4, 4)
    conv   k4 s1 128 -> 256     weight (256, 128, 4, 4)
    conv   k4 s1 256 -> 256     weight (256, 256, 4, 4)
    conv   k4 s1 256 -> 256     weight (256, 256, 4, 4)
    deconv k4 s2 256 -> 128     weight (256, 128, 4, 4)
    deconv k4 s2 128 ->   2     weight (128, 2, 4, 4)

Leaky ReLU (slope 0.2) follows the first six layers; no normalization
anywhere. The stride-1 convs keep spatial size via fixed asymmetric
zero-padding (1 left/top, 2 right/bottom) — an even kernel cannot be
padded symmetrically.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .generator import seed_init

__all__ = [
    "DetectorConfig",
    "ArtifactDetector",
    "GlobalDiscriminator",
    "build_detector",
    "build_discriminator",
]


@dataclass(frozen=True)
class DetectorConfig:
    base_channels: int = 64
    input_channels: int = 3
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError(f"leaky_slope must lie in (0, 1), got {self.leaky_slope}")


def _same_pad_conv(cin, cout, slope=None):
    # k=4 s=1 with output size == input size: pad (left, right, top, bottom)
    # = (1, 2, 1, 2), then an unpadded conv.
    layers = [nn.ZeroPad2d((1, 2, 1, 2)), nn.Conv2d(cin, cout, 4, stride=1, padding=0)]
    if slope is not None:
        layers.append(nn.LeakyReLU(slope, inplace=True))
    return layers


class ArtifactDetector(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        cfg = config or DetectorConfig()
        self.config = cfg
        b = cfg.base_channels
        s = cfg.leaky_slope
        self.net = nn.Sequential(
            nn.Conv2d(cfg.input_channels, b, 4, stride=2, padding=1),
            nn.LeakyReLU(s, inplace=True),
            nn.Conv2d(b, 2 * b, 4, stride=2, padding=1),
            nn.LeakyReLU(s, inplace=True),
            *_same_pad_conv(2 * b, 4 * b, s),
            *_same_pad_conv(4 * b, 4 * b, s),
            *_same_pad_conv(4 * b, 4 * b, s),
            nn.ConvTranspose2d(4 * b, 2 * b, 4, stride=2, padding=1),
            nn.LeakyReLU(s, inplace=True),
            nn.ConvTranspose2d(2 * b, 2, 4, stride=2, padding=1),
        )

    def forward_logits(self, image):
        """(N, C, H, W) image -> (N, 2, H, W) per-pixel class logits."""
        if image.shape[-1] % 4 or image.shape[-2] % 4:
            raise ValueError(
                f"spatial size must be divisible by 4, got {tuple(image.shape[-2:])}"
            )
        return self.net(image)

    def forward(self, image):
        """(N, C, H, W) image -> (N, H, W) valuation map in (0, 1).

        Softmax over the two class channels; V is the artifact-channel
        probability, so equal logits give exactly 0.5.
        """
        logits = self.forward_logits(image)
        return torch.softmax(logits, dim=1)[:, 1]


class GlobalDiscriminator(nn.Module):
    """Detector backbone with a global-average head: one score per image.

    The pixel-wise class-margin map (clean logit minus artifact logit) is
    averaged over space and squashed by a sigmoid, giving the probability
    that the whole image is real.
    """

    def __init__(self, config=None):
        super().__init__()
        self.backbone = ArtifactDetector(config)

    def forward(self, image):
        logits = self.backbone.forward_logits(image)
        margin = logits[:, 0] - logits[:, 1]
        return torch.sigmoid(margin.mean(dim=(-2, -1)))


def build_detector(config=None, init_seed=0):
    """Construct a seeded ArtifactDetector (weights N(0, 0.02^2), biases 0)."""
    return seed_init(ArtifactDetector(config), init_seed)


def build_discriminator(config=None, init_seed=0):
    """Construct a seeded GlobalDiscriminator for the adversarial mode."""
    return seed_init(GlobalDiscriminator(config), init_seed)
