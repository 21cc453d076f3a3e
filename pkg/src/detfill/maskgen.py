"""Procedural irregular-mask synthesis, augmentation, and ratio bucketing.

Masks emulate free-form brush drawings: each stroke is a random polyline
(random vertex count, turning angles, and brush width) rasterized onto a
zero canvas with round caps. Everything is driven by explicit seeds, so a
(config, seed) pair determines the mask bit-for-bit.

Masks are classified into six ratio buckets, (0.01, 0.1] through
(0.5, 0.6] in steps of 0.1 (half-open: lower exclusive, upper inclusive).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

__all__ = [
    "MaskGenConfig",
    "RatioBucket",
    "BUCKETS",
    "default_border_margin",
    "generate_stroke_mask",
    "augment_mask",
    "mask_ratio",
    "bucket_of",
    "generate_mask_in_bucket",
]


def default_border_margin(size):
    """Border-constraint margin: 16 px at size 256, scaled proportionally."""
    return max(1, round(size * 16 / 256))


@dataclass(frozen=True)
class MaskGenConfig:
    """Knobs for one stroke-mask drawing.

    Ranges are inclusive (lo, hi) pairs. ``num_strokes_range`` may start at
    0 (an empty drawing yields the all-zeros mask); brush widths and vertex
    counts must be at least 1. ``border_margin=None`` means the default
    proportional margin.
    """

    size: int = 256
    num_strokes_range: tuple = (1, 4)
    brush_width_range: tuple = (8, 32)
    vertex_count_range: tuple = (4, 12)
    border_constrained: bool = False
    border_margin: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"size must be >= 1, got {self.size}")
        for name, (lo, hi), floor in (
            ("num_strokes_range", self.num_strokes_range, 0),
            ("brush_width_range", self.brush_width_range, 1),
            ("vertex_count_range", self.vertex_count_range, 1),
        ):
            if lo > hi:
                raise ValueError(f"{name} is empty: {(lo, hi)}")
            if lo < floor:
                raise ValueError(f"{name} lower bound must be >= {floor}, got {lo}")

    @property
    def margin(self):
        if self.border_margin is not None:
            return self.border_margin
        return default_border_margin(self.size)


@dataclass(frozen=True)
class RatioBucket:
    """One mask-ratio class: ratios in (lower, upper]."""

    index: int
    lower: float
    upper: float

    def contains(self, ratio):
        return self.lower < ratio <= self.upper


#: The six ratio classes, (0.01, 0.1] .. (0.5, 0.6].
BUCKETS = (
    RatioBucket(0, 0.01, 0.1),
    RatioBucket(1, 0.1, 0.2),
    RatioBucket(2, 0.2, 0.3),
    RatioBucket(3, 0.3, 0.4),
    RatioBucket(4, 0.4, 0.5),
    RatioBucket(5, 0.5, 0.6),
)


def mask_ratio(mask):
    """Fraction of hole (value 1) pixels; the class-balance weight alpha."""
    mask = np.asarray(mask)
    return float(np.count_nonzero(mask > 0.5) / mask.size)


def bucket_of(ratio):
    """Return the RatioBucket containing ratio, or None outside (0.01, 0.6]."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must lie in [0, 1], got {ratio}")
    for bucket in BUCKETS:
        if bucket.contains(ratio):
            return bucket
    return None


def _draw_stroke(draw, rng, size, brush_width_range, vertex_count_range, lo_xy, hi_xy):
    """Rasterize one random polyline with round caps onto `draw`.

    Vertex coordinates are clamped into [lo_xy, hi_xy]; the angle performs
    a bounded random walk (turns up to 90 degrees per segment) and segment
    lengths run from size/16 to size/4.
    """
    n_vertices = int(rng.integers(vertex_count_range[0], vertex_count_range[1] + 1))
    width = int(rng.integers(brush_width_range[0], brush_width_range[1] + 1))
    x = float(rng.uniform(lo_xy, hi_xy))
    y = float(rng.uniform(lo_xy, hi_xy))
    angle = float(rng.uniform(0.0, 2.0 * math.pi))
    points = [(x, y)]
    for _ in range(n_vertices):
        angle += float(rng.uniform(-math.pi / 2.0, math.pi / 2.0))
        length = float(rng.uniform(size / 16.0, size / 4.0))
        x = min(max(x + length * math.cos(angle), lo_xy), hi_xy)
        y = min(max(y + length * math.sin(angle), lo_xy), hi_xy)
        points.append((x, y))
    draw.line(points, fill=255, width=width)
    half = width / 2.0
    for px, py in points:
        draw.ellipse([px - half, py - half, px + half, py + half], fill=255)


def _finalize(canvas, config):
    mask = (np.asarray(canvas) >= 128).astype(np.float32)
    if config.border_constrained:
        m = config.margin
        mask[:m, :] = 0.0
        mask[-m:, :] = 0.0
        mask[:, :m] = 0.0
        mask[:, -m:] = 0.0
    return mask


def generate_stroke_mask(config):
    """Draw a random stroke mask; deterministic for a given config.

    With ``border_constrained`` every hole pixel lands strictly inside the
    margin frame: vertices are clamped into the inset box and the frame is
    cleared after rasterization (brush caps can spill past the clamp box).
    """
    rng = np.random.default_rng(config.seed)
    canvas = Image.new("L", (config.size, config.size), 0)
    draw = ImageDraw.Draw(canvas)
    lo_xy = float(config.margin) if config.border_constrained else 0.0
    hi_xy = config.size - 1.0 - (config.margin if config.border_constrained else 0.0)
    n_strokes = int(
        rng.integers(config.num_strokes_range[0], config.num_strokes_range[1] + 1)
    )
    for _ in range(n_strokes):
        _draw_stroke(
            draw,
            rng,
            config.size,
            config.brush_width_range,
            config.vertex_count_range,
            lo_xy,
            hi_xy,
        )
    return _finalize(canvas, config)


def augment_mask(mask, rotation_deg=0.0, dilation_px=0, crop=None):
    """Rotate, dilate, then crop-and-resize a mask — in exactly that order.

    Parameters
    ----------
    mask : (H, W) binary array
    rotation_deg : float
        Nearest-neighbor rotation about the center; the canvas size is
        kept, corners fill with 0. Multiples of 360 are exact no-ops.
    dilation_px : int >= 0
        Morphological dilation with a square (2*d+1) structuring element.
    crop : (top, left, height, width) or None
        Window to cut out, then nearest-neighbor resize back to the input
        size. None or the full frame is the identity.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"expected (H, W) mask, got shape {mask.shape}")
    if dilation_px < 0:
        raise ValueError(f"dilation_px must be >= 0, got {dilation_px}")
    size = mask.shape[0]

    out = mask.astype(np.float32)
    if rotation_deg % 360.0 != 0.0:
        out = ndimage.rotate(
            out, rotation_deg, reshape=False, order=0, mode="constant", cval=0.0
        )
    out = (out >= 0.5).astype(np.float32)

    if dilation_px > 0:
        w = 2 * dilation_px + 1
        out = ndimage.binary_dilation(
            out > 0.5, structure=np.ones((w, w), dtype=bool)
        ).astype(np.float32)

    if crop is not None:
        top, left, height, width = crop
        if (
            top < 0
            or left < 0
            or height < 1
            or width < 1
            or top + height > out.shape[0]
            or left + width > out.shape[1]
        ):
            raise ValueError(f"crop {crop} out of bounds for shape {out.shape}")
        window = out[top : top + height, left : left + width]
        rows = np.arange(size) * height // size
        cols = np.arange(size) * width // size
        out = window[np.ix_(rows, cols)]

    return out.astype(np.float32)


def generate_mask_in_bucket(bucket, size, base_seed, index, border_constrained=False, max_attempts=200):
    """Grow a stroke mask until its ratio lands in `bucket`.

    Strokes are added one at a time until the ratio clears the bucket's
    lower bound; if the last stroke overshoots the upper bound the canvas
    is thrown away and redrawn from a fresh substream. Deterministic in
    (base_seed, bucket, index). Raises RuntimeError when max_attempts
    canvases all overshoot.
    """
    probe = MaskGenConfig(size=size, border_constrained=border_constrained, seed=0)
    lo_xy = float(probe.margin) if border_constrained else 0.0
    hi_xy = size - 1.0 - (probe.margin if border_constrained else 0.0)
    # Thinner brushes for the low buckets keep per-stroke area increments
    # small relative to the band width, taming overshoot.
    brush_hi = max(2, size // (16 - 2 * bucket.index))
    brush_range = (max(1, size // 48), brush_hi)

    cfg = replace(probe, brush_width_range=brush_range)
    for attempt in range(max_attempts):
        rng = np.random.default_rng((base_seed, bucket.index, index, attempt))
        canvas = Image.new("L", (size, size), 0)
        draw = ImageDraw.Draw(canvas)
        ratio = 0.0
        for _ in range(512):  # stroke cap: a stuck canvas becomes a retry
            if ratio > bucket.lower:
                break
            _draw_stroke(
                draw, rng, size, cfg.brush_width_range, cfg.vertex_count_range,
                lo_xy, hi_xy,
            )
            ratio = mask_ratio(_finalize(canvas, cfg))
        if bucket.lower < ratio <= bucket.upper:
            return _finalize(canvas, cfg)
    raise RuntimeError(
        f"could not hit bucket ({bucket.lower}, {bucket.upper}] for "
        f"seed={base_seed} index={index} after {max_attempts} attempts"
    )
