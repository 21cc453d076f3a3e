"""Objective functions: segmentation losses for the artifact detector,
valuation-to-weight mapping, weighted reconstruction losses, and the
classic adversarial pair.

All functions take torch tensors and are differentiable; logarithms are
clamped at ``EPS_LOG`` so perfect/worst-case predictions stay finite.

Shape conventions: valuation maps and masks are (..., H, W) with matching
shapes; images are (..., C, H, W); per-pixel weights broadcast across the
channel axis. The class-balance weight ``alpha`` may be a scalar or a
tensor broadcastable against the mask (one entry per batch image).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

__all__ = [
    "EPS_LOG",
    "LossConfig",
    "ce_loss",
    "balanced_ce_loss",
    "focal_loss",
    "weight_map",
    "weighted_l1",
    "hard_weighted_l1",
    "adv_losses",
]

#: Floor for log arguments; keeps losses finite at saturated predictions
#: without disturbing values in the interior.
EPS_LOG = 1e-12


@dataclass
class LossConfig:
    """Loss hyperparameters.

    gamma
        Focusing exponent of the focal loss (>= 0); 0 recovers balanced
        cross entropy.
    mapping_kind / base_x
        Valuation-to-weight transition: "linear" gives 1 + V (range
        [1, 2]), "exponential" gives base_x ** V (range [1, base_x]).
    lambda_adv / lambda_l1
        Tradeoff weights of the adversarial baseline's combined
        generator loss.
    lambda_hole / lambda_valid
        Hard per-region weights of the mask-weighted baseline.
    """

    gamma: float = 2.0
    mapping_kind: str = "exponential"
    base_x: float = 10.0
    lambda_adv: float = 0.1
    lambda_l1: float = 1.0
    lambda_hole: float = 6.0
    lambda_valid: float = 1.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.mapping_kind not in ("linear", "exponential"):
            raise ValueError(f"unknown mapping_kind: {self.mapping_kind!r}")
        if self.base_x <= 1:
            raise ValueError(f"base_x must be > 1, got {self.base_x}")


def _log(t):
    return torch.log(torch.clamp(t, min=EPS_LOG))


def _check_same_shape(a, b, what="mask"):
    if a.shape != b.shape:
        raise ValueError(f"valuation {tuple(a.shape)} and {what} {tuple(b.shape)} differ")


def ce_loss(v, m):
    """Pixel-wise binary cross entropy of a valuation map against a mask.

    -(1/N) sum_i [ M_i log V_i + (1 - M_i) log(1 - V_i) ], N = element
    count. Zero when V == M exactly (saturated logs multiply zero weights).
    """
    _check_same_shape(v, m)
    return -(m * _log(v) + (1.0 - m) * _log(1.0 - v)).mean()


def balanced_ce_loss(v, m, alpha):
    """Class-balanced cross entropy.

    The hole term is weighted by (1 - alpha) and the valid term by alpha,
    where alpha is the image's mask ratio — the minority class (holes are
    usually sparse) gets the larger weight.
    """
    _check_same_shape(v, m)
    alpha = torch.as_tensor(alpha, dtype=v.dtype, device=v.device)
    if (alpha < 0).any() or (alpha > 1).any():
        raise ValueError("alpha must lie in [0, 1]")
    return -(
        (1.0 - alpha) * m * _log(v) + alpha * (1.0 - m) * _log(1.0 - v)
    ).mean()


def focal_loss(v, m, alpha, gamma=2.0):
    """Balanced cross entropy with focal modulation.

    Each term of the balanced loss is scaled by the predicted probability
    of the *wrong* class raised to gamma — (1-V)^gamma on holes, V^gamma
    on valid pixels — so confidently-correct pixels contribute little and
    training focuses on the hard ones. gamma = 0 reduces exactly to
    balanced_ce_loss.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    _check_same_shape(v, m)
    alpha = torch.as_tensor(alpha, dtype=v.dtype, device=v.device)
    if (alpha < 0).any() or (alpha > 1).any():
        raise ValueError("alpha must lie in [0, 1]")
    return -(
        (1.0 - alpha) * (1.0 - v) ** gamma * m * _log(v)
        + alpha * v**gamma * (1.0 - m) * _log(1.0 - v)
    ).mean()


def weight_map(v, config):
    """Map a valuation map V in [0,1] to reconstruction weights W >= 1.

    linear: W = 1 + V (range [1, 2]); exponential: W = base_x ** V (range
    [1, base_x]). Elementwise and strictly increasing in V either way.
    """
    if config.base_x <= 1:
        raise ValueError(f"base_x must be > 1, got {config.base_x}")
    if config.mapping_kind == "linear":
        return 1.0 + v
    if config.mapping_kind == "exponential":
        return torch.as_tensor(
            config.base_x, dtype=v.dtype, device=v.device
        ) ** v
    raise ValueError(f"unknown mapping_kind: {config.mapping_kind!r}")


def _broadcast_weight(w, image_shape):
    # per-pixel weights apply to every channel: (..., H, W) -> (..., 1, H, W)
    if w.shape[-2:] != image_shape[-2:]:
        raise ValueError(
            f"weight spatial size {tuple(w.shape[-2:])} does not match "
            f"image {tuple(image_shape[-2:])}"
        )
    return w.unsqueeze(-3)


def weighted_l1(out, gt, w):
    """Per-pixel weighted mean absolute error.

    (1/N) sum_i W_i * |out_i - gt_i| over all pixel-channel elements, the
    weight shared across channels. W = 1 everywhere reduces to the plain
    mean absolute error.
    """
    if out.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(out.shape)} vs {tuple(gt.shape)}")
    return (_broadcast_weight(w, out.shape) * (out - gt).abs()).mean()


def hard_weighted_l1(out, gt, m, lambda_hole=6.0, lambda_valid=1.0):
    """Mean absolute error with fixed per-region weights.

    Hole pixels weigh lambda_hole, valid pixels lambda_valid. With both
    weights 1 this is exactly the plain mean absolute error.
    """
    if out.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(out.shape)} vs {tuple(gt.shape)}")
    w = lambda_hole * m + lambda_valid * (1.0 - m)
    return (_broadcast_weight(w, out.shape) * (out - gt).abs()).mean()


def adv_losses(d_real, d_fake):
    """Classic non-saturating discriminator/generator loss pair.

    d_real / d_fake are post-sigmoid discriminator outputs in [0, 1] (one
    scalar per image, any shape). Returns (gen_loss, disc_loss):

    disc_loss = -mean[ log d_real + log(1 - d_fake) ]
    gen_loss  =  mean[ log(1 - d_fake) ]

    The generator minimizes gen_loss (pushing d_fake toward 1); in the
    adversarial training mode it is combined as
    lambda_adv * gen_loss + lambda_l1 * mean-l1.
    """
    for name, t in (("d_real", d_real), ("d_fake", d_fake)):
        if (t < 0).any() or (t > 1).any():
            raise ValueError(f"{name} must lie in [0, 1] (post-sigmoid)")
    disc_loss = -(_log(d_real) + _log(1.0 - d_fake)).mean()
    gen_loss = _log(1.0 - d_fake).mean()
    return gen_loss, disc_loss
