"""Image and mask I/O, corrupted-input composition, and colormap export.

Conventions used across the package:

* images are float32/float64 numpy arrays of shape (H, W, C), values in
  [0, 1] (C=3 for RGB, C=1 for grayscale);
* masks are float arrays of shape (H, W) with values in {0, 1},
  1 = missing (hole) pixel, 0 = valid pixel;
* mask PNGs store 255 = hole, 0 = valid and are thresholded at 128 on load.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

__all__ = [
    "load_image",
    "load_mask",
    "save_image",
    "save_mask",
    "compose_input",
    "composite_output",
    "export_colormap",
    "to_tensor",
    "to_array",
    "mask_to_tensor",
]


def load_image(path, target_size=None):
    """Load an 8-bit image as a (H, W, C) float array in [0, 1].

    Parameters
    ----------
    path : str or path-like
        PNG or JPEG file. RGB and grayscale inputs are supported; palette
        and RGBA images are converted to RGB.
    target_size : int, optional
        If given, resize (bilinear) to target_size x target_size.

    Returns
    -------
    ndarray, float32, shape (H, W, 3) or (H, W, 1), values in [0, 1].
    """
    with Image.open(path) as im:
        if im.width == 0 or im.height == 0:
            raise ValueError(f"zero-dimension image: {path}")
        if im.mode in ("L", "I;16", "I"):
            im = im.convert("L")
        elif im.mode != "RGB":
            im = im.convert("RGB")
        if target_size is not None:
            if target_size <= 0:
                raise ValueError(f"target_size must be positive, got {target_size}")
            im = im.resize((target_size, target_size), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def load_mask(path, target_size=None):
    """Load a mask PNG as a (H, W) binary float array (1 = hole).

    Any channel layout is collapsed to a single channel first; pixels with
    value >= 128 become 1.0. Resizing (if requested) is nearest-neighbor so
    the result stays strictly binary.
    """
    with Image.open(path) as im:
        if im.width == 0 or im.height == 0:
            raise ValueError(f"zero-dimension mask: {path}")
        im = im.convert("L")
        if target_size is not None:
            if target_size <= 0:
                raise ValueError(f"target_size must be positive, got {target_size}")
            im = im.resize((target_size, target_size), Image.NEAREST)
        arr = np.asarray(im)
    return (arr >= 128).astype(np.float32)


def save_image(arr, path):
    """Write a (H, W, C) [0,1] float array as an 8-bit PNG."""
    arr = np.asarray(arr)
    if arr.ndim != 3:
        raise ValueError(f"expected (H, W, C) array, got shape {arr.shape}")
    data = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    if data.shape[2] == 1:
        Image.fromarray(data[:, :, 0], mode="L").save(path)
    else:
        Image.fromarray(data, mode="RGB").save(path)


def save_mask(mask, path):
    """Write a (H, W) binary mask as a single-channel PNG (255 = hole)."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"expected (H, W) mask, got shape {mask.shape}")
    Image.fromarray((mask >= 0.5).astype(np.uint8) * 255, mode="L").save(path)


def _check_pair(img, mask):
    if img.shape[:2] != mask.shape:
        raise ValueError(
            f"image {img.shape[:2]} and mask {mask.shape} sizes differ"
        )


def compose_input(gt, mask):
    """Build the corrupted input: hole pixels painted white, rest kept.

    gt * (1 - mask) + mask, broadcast over channels — masked pixels become
    1.0 in every channel, valid pixels copy the source image.
    """
    gt = np.asarray(gt)
    mask = np.asarray(mask)
    _check_pair(gt, mask)
    m = mask[:, :, None]
    return (gt * (1.0 - m) + m).astype(gt.dtype)


def composite_output(out, gt, mask):
    """Paste predicted hole content into the ground truth: out⊙M + gt⊙(1−M).

    Display/inference convenience only — metrics default to the raw
    prediction (see metrics module).
    """
    out = np.asarray(out)
    gt = np.asarray(gt)
    if out.shape != gt.shape:
        raise ValueError(f"shape mismatch: {out.shape} vs {gt.shape}")
    _check_pair(out, mask)
    m = np.asarray(mask)[:, :, None]
    return (out * m + gt * (1.0 - m)).astype(out.dtype)


def _build_colormap_lut():
    # Blue-to-red gradient (jet-style): value 0 -> dark blue, 0.5 -> green,
    # 1 -> dark red. Piecewise-linear ramps, tabulated once at 256 entries
    # so exported bytes are a pure table lookup.
    t = np.arange(256) / 255.0
    r = np.clip(1.5 - np.abs(4.0 * t - 3.0), 0.0, 1.0)
    g = np.clip(1.5 - np.abs(4.0 * t - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(4.0 * t - 1.0), 0.0, 1.0)
    lut = np.stack([r, g, b], axis=1)
    return np.rint(lut * 255.0).astype(np.uint8)


#: 256 x 3 uint8 gradient table used by export_colormap. Row 0 (value 0.0)
#: is (0, 0, 128) blue; row 128 (value 0.5) is (130, 255, 126) green;
#: row 255 (value 1.0) is (128, 0, 0) red.
COLORMAP_LUT = _build_colormap_lut()


def valuation_to_rgb(vmap):
    """Map a [0,1] valuation map to an (H, W, 3) uint8 image via the LUT."""
    vmap = np.asarray(vmap)
    if vmap.ndim != 2:
        raise ValueError(f"expected (H, W) map, got shape {vmap.shape}")
    if np.min(vmap) < 0.0 or np.max(vmap) > 1.0:
        raise ValueError("valuation map values must lie in [0, 1]")
    idx = np.clip(np.rint(vmap * 255.0), 0, 255).astype(np.intp)
    return COLORMAP_LUT[idx]


def export_colormap(vmap, path):
    """Write a valuation map as a colormapped PNG (blue=0 ... red=1)."""
    Image.fromarray(valuation_to_rgb(vmap), mode="RGB").save(path)


# ---------------------------------------------------------------------------
# numpy <-> torch bridging (torch imported lazily so pure-numpy paths —
# maskgen, metrics, colormap export — work without it in scope)

def to_tensor(arr):
    """(H, W, C) [0,1] numpy array -> (1, C, H, W) float32 torch tensor."""
    import torch

    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim != 3:
        raise ValueError(f"expected (H, W, C) array, got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None]


def to_array(tensor):
    """(1, C, H, W) or (C, H, W) torch tensor -> (H, W, C) numpy array."""
    t = tensor.detach().cpu()
    if t.dim() == 4:
        if t.shape[0] != 1:
            raise ValueError(f"expected batch of 1, got {t.shape[0]}")
        t = t[0]
    if t.dim() != 3:
        raise ValueError(f"expected (C, H, W) tensor, got shape {tuple(t.shape)}")
    return t.numpy().transpose(1, 2, 0)


def mask_to_tensor(mask):
    """(H, W) binary numpy mask -> (1, 1, H, W) float32 torch tensor."""
    import torch

    mask = np.asarray(mask, dtype=np.float32)
    if mask.ndim != 2:
        raise ValueError(f"expected (H, W) mask, got shape {mask.shape}")
    return torch.from_numpy(np.ascontiguousarray(mask))[None, None]
