"""Encoder-decoder inpainting generator.

Layer plan (base_channels=64, RGB + mask input -> RGB output):

    stem    conv  k3 s1   4 ->  64      weight (64, 4, 3, 3)
    down    conv  k4 s2  64 -> 128      weight (128, 64, 4, 4)
    down    conv  k4 s2 128 -> 256      weight (256, 128, 4, 4)
    8 x residual block @ 256, each two dilated convs k3 s1 d2,
            weights (256, 256, 3, 3) twice
    up      deconv k4 s2 256 -> 128     weight (256, 128, 4, 4)
    up      deconv k4 s2 128 ->  64     weight (128, 64, 4, 4)
    out     conv  k3 s1  64 ->   3      weight (3, 64, 3, 3)

Instance norm + ReLU follow every conv/deconv except the output conv,
which feeds a sigmoid so predictions live in (0, 1). All convs carry
biases (every bias shape = out-channel count); the norms are
parameter-free. Weights are drawn from a seeded N(0, 0.02^2), biases
start at zero, in named_parameters order.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

__all__ = ["GeneratorConfig", "DilatedResidualBlock", "InpaintGenerator", "build_generator", "seed_init"]


@dataclass(frozen=True)
class GeneratorConfig:
    base_channels: int = 64
    num_residual_blocks: int = 8
    dilation: int = 2
    input_channels: int = 4  # image channels + 1 mask channel
    output_channels: int = 3

    def __post_init__(self):
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.num_residual_blocks < 1:
            raise ValueError(
                f"num_residual_blocks must be >= 1, got {self.num_residual_blocks}"
            )
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")


def _norm(ch):
    return nn.InstanceNorm2d(ch, track_running_stats=False)


class DilatedResidualBlock(nn.Module):
    """conv-IN-ReLU-conv-IN body with a skip add, ReLU on the sum.

    Zeroing both conv weights and biases turns the block into the
    identity on non-negative inputs (which is what it sees in-network,
    downstream of a ReLU).
    """

    def __init__(self, channels, dilation=2):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, stride=1, padding=dilation, dilation=dilation),
            _norm(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, stride=1, padding=dilation, dilation=dilation),
            _norm(channels),
        )

    def forward(self, x):
        return torch.relu(x + self.body(x))


class InpaintGenerator(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        cfg = config or GeneratorConfig()
        self.config = cfg
        b = cfg.base_channels
        self.encoder = nn.Sequential(
            nn.Conv2d(cfg.input_channels, b, 3, stride=1, padding=1),
            _norm(b),
            nn.ReLU(inplace=True),
            nn.Conv2d(b, 2 * b, 4, stride=2, padding=1),
            _norm(2 * b),
            nn.ReLU(inplace=True),
            nn.Conv2d(2 * b, 4 * b, 4, stride=2, padding=1),
            _norm(4 * b),
            nn.ReLU(inplace=True),
        )
        self.blocks = nn.Sequential(
            *[DilatedResidualBlock(4 * b, cfg.dilation) for _ in range(cfg.num_residual_blocks)]
        )
        self.decoder = nn.Sequential(
            nn.ConvTranspose2d(4 * b, 2 * b, 4, stride=2, padding=1),
            _norm(2 * b),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(2 * b, b, 4, stride=2, padding=1),
            _norm(b),
            nn.ReLU(inplace=True),
            nn.Conv2d(b, cfg.output_channels, 3, stride=1, padding=1),
        )

    def forward(self, image, mask):
        """image (N, C, H, W) + mask (N, 1, H, W) -> prediction in (0, 1).

        The mask rides along as an extra input channel; H and W must be
        divisible by 4 (two stride-2 stages down and back up).
        """
        if image.shape[-1] % 4 or image.shape[-2] % 4:
            raise ValueError(
                f"spatial size must be divisible by 4, got {tuple(image.shape[-2:])}"
            )
        if mask.shape[-2:] != image.shape[-2:]:
            raise ValueError(
                f"mask {tuple(mask.shape[-2:])} does not match image "
                f"{tuple(image.shape[-2:])}"
            )
        x = torch.cat([image, mask], dim=1)
        x = self.encoder(x)
        x = self.blocks(x)
        x = self.decoder(x)
        return torch.sigmoid(x)


def seed_init(module, seed, std=0.02):
    """Deterministically (re)initialize: weights N(0, std^2), biases zero.

    Parameters are filled in named_parameters order from a dedicated
    torch.Generator, so the same seed always yields the same bytes
    regardless of global RNG state.
    """
    g = torch.Generator()
    g.manual_seed(seed)
    with torch.no_grad():
        for name, p in module.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            else:
                p.copy_(torch.randn(p.shape, generator=g) * std)
    return module


def build_generator(config=None, init_seed=0):
    """Construct a seeded InpaintGenerator."""
    return seed_init(InpaintGenerator(config), init_seed)
