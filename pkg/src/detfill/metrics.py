"""Evaluation metrics: mean absolute error, PSNR, SSIM, and a Fréchet
feature distance with a pluggable extractor.

All functions take (H, W, C) numpy images in [0, 1] and compute in
float64. The Fréchet machinery fits a Gaussian (sample mean, n-1 sample
covariance) to a feature set per image collection and measures the
Wasserstein-2 distance between the fits; the feature extractor is an
interface (image -> d-vector), with a deterministic pixel-projection
extractor bundled for desk-scale work and an optional adapter around
torchvision's Inception-V3 (weights not bundled).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, signal

from .imaging import composite_output

__all__ = [
    "l1_error",
    "psnr",
    "ssim",
    "FeatureSetStats",
    "frechet_distance",
    "fid",
    "PixelProjectionExtractor",
    "inception_extractor",
    "BucketMetrics",
    "MetricsReport",
    "evaluate_dataset",
]

PSNR_CAP_DB = 100.0

_LUMA = np.array([0.299, 0.587, 0.114])

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_C1 = (0.01 * 1.0) ** 2
_SSIM_C2 = (0.03 * 1.0) ** 2


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def l1_error(out, gt):
    """Mean absolute difference over all elements, as a percentage.

    Parameters
    ----------
    out, gt : ndarray
        Same-shape arrays in [0, 1].

    Returns
    -------
    float
        100 * mean(|out - gt|).
    """
    out = np.asarray(out, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_same_shape(out, gt)
    return float(np.mean(np.abs(out - gt)) * 100.0)


def psnr(out, gt):
    """Peak signal-to-noise ratio in dB, peak value 1.0.

    10 * log10(1 / MSE) with the MSE taken over all elements. A zero MSE
    returns the documented cap of 100.0 dB, and the cap also bounds the
    result for vanishingly small errors. The squared-error sum is
    accumulated with compensated summation so exact closed-form cases
    (e.g. uniform |diff| 0.1 -> 20 dB) come out exact.
    """
    out = np.asarray(out, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_same_shape(out, gt)
    sq = np.square(out - gt, dtype=np.float64).ravel()
    mse = math.fsum(sq) / sq.size
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse)))


def _to_gray(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ _LUMA
    if img.ndim == 3 and img.shape[2] == 1:
        return img[:, :, 0]
    if img.ndim == 2:
        return img
    raise ValueError(f"expected (H, W[, C]) image, got shape {img.shape}")


def _gaussian_window(size, sigma):
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(out, gt):
    """Single-scale structural similarity.

    RGB inputs are converted to luma (0.299, 0.587, 0.114) first. Local
    statistics use an 11x11 Gaussian window (sigma 1.5) without padding
    (valid windows only), biased variance estimates, stabilizers
    C1 = 0.01^2 and C2 = 0.03^2 at dynamic range 1.0; the result is the
    mean of the local similarity map.

    Raises ValueError when the image is smaller than the window.
    """
    x = _to_gray(out)
    y = _to_gray(gt)
    _check_same_shape(x, y)
    if x.shape[0] < _SSIM_WINDOW or x.shape[1] < _SSIM_WINDOW:
        raise ValueError(
            f"image {x.shape} smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} window"
        )
    w = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    mu_x = signal.convolve2d(x, w, mode="valid")
    mu_y = signal.convolve2d(y, w, mode="valid")
    xx = signal.convolve2d(x * x, w, mode="valid")
    yy = signal.convolve2d(y * y, w, mode="valid")
    xy = signal.convolve2d(x * y, w, mode="valid")
    var_x = xx - mu_x**2
    var_y = yy - mu_y**2
    cov = xy - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + _SSIM_C1) * (2.0 * cov + _SSIM_C2)
    den = (mu_x**2 + mu_y**2 + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# Fréchet distance over feature sets

@dataclass
class FeatureSetStats:
    """Gaussian fit of a feature set: mean vector and covariance matrix."""

    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def from_features(cls, features):
        """Fit from an (n, d) feature matrix; needs n >= 2 for the
        n-1-denominator covariance."""
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise ValueError(f"expected (n, d) features, got shape {features.shape}")
        if features.shape[0] < 2:
            raise ValueError(
                f"need at least 2 samples for a covariance, got {features.shape[0]}"
            )
        mean = features.mean(axis=0)
        cov = np.cov(features, rowvar=False)
        cov = np.atleast_2d(cov)
        cov = 0.5 * (cov + cov.T)
        return cls(mean=mean, cov=cov)


_PSD_TOL = 1e-6


def _checked_cov(cov, name):
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"{name} covariance must be square, got shape {cov.shape}")
    scale = max(1.0, float(np.abs(cov).max()))
    if np.abs(cov - cov.T).max() > _PSD_TOL * scale:
        raise ArithmeticError(f"{name} covariance is not symmetric within tolerance")
    sym = 0.5 * (cov + cov.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals.min() < -_PSD_TOL * scale:
        raise ArithmeticError(
            f"{name} covariance is not positive semidefinite "
            f"(min eigenvalue {eigvals.min():.3e})"
        )
    # clip tiny negative eigenvalues from floating-point noise
    if eigvals.min() < 0.0:
        sym = (eigvecs * np.clip(eigvals, 0.0, None)) @ eigvecs.T
        sym = 0.5 * (sym + sym.T)
    return sym


def frechet_distance(a, b):
    """Wasserstein-2 distance between two Gaussian feature fits.

    |mu_a - mu_b|^2 + Tr(Sig_a + Sig_b - 2 (Sig_a Sig_b)^{1/2}).

    The matrix square root is computed on the symmetrized, eigenvalue-
    clipped covariances; if it degenerates numerically it is retried with
    a small diagonal offset, and imaginary residue beyond 1e-6 is a
    numeric error (ArithmeticError), below that it is discarded.
    """
    mu_a = np.asarray(a.mean, dtype=np.float64)
    mu_b = np.asarray(b.mean, dtype=np.float64)
    if mu_a.shape != mu_b.shape:
        raise ValueError(
            f"feature dimensions differ: {mu_a.shape} vs {mu_b.shape}"
        )
    cov_a = _checked_cov(a.cov, "first")
    cov_b = _checked_cov(b.cov, "second")
    if cov_a.shape[0] != mu_a.shape[0]:
        raise ValueError(
            f"mean dim {mu_a.shape[0]} does not match covariance {cov_a.shape}"
        )

    covmean, _ = linalg.sqrtm(cov_a @ cov_b, disp=False)
    if not np.isfinite(covmean).all():
        offset = np.eye(cov_a.shape[0]) * 1e-6
        covmean, _ = linalg.sqrtm((cov_a + offset) @ (cov_b + offset), disp=False)
    if np.iscomplexobj(covmean):
        residue = float(np.abs(covmean.imag).max())
        if residue > _PSD_TOL * max(1.0, float(np.abs(covmean.real).max())):
            raise ArithmeticError(
                f"matrix square root has imaginary residue {residue:.3e}"
            )
        covmean = covmean.real
    diff = mu_a - mu_b
    value = float(
        diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(covmean)
    )
    return value


def fid(real_images, fake_images, extractor):
    """Fréchet distance between feature fits of two image collections.

    Each collection needs at least 2 images (sample covariance); the
    extractor maps an (H, W, C) [0,1] image to a 1-D feature vector.
    """
    if len(real_images) < 2 or len(fake_images) < 2:
        raise ValueError("need at least 2 images per set for a covariance")
    feats_real = np.stack([np.asarray(extractor(im), dtype=np.float64) for im in real_images])
    feats_fake = np.stack([np.asarray(extractor(im), dtype=np.float64) for im in fake_images])
    return frechet_distance(
        FeatureSetStats.from_features(feats_real),
        FeatureSetStats.from_features(feats_fake),
    )


class PixelProjectionExtractor:
    """Deterministic bundled feature extractor for desk-scale FID.

    Bin-averages the image onto a grid x grid cell layout per channel
    (grayscale inputs are broadcast to 3 channels), flattens, and applies
    a fixed seeded Gaussian random projection down to output_dim. No
    learned weights, bitwise reproducible.
    """

    def __init__(self, output_dim=16, grid=8, seed=1234):
        self.output_dim = output_dim
        self.grid = grid
        n_in = grid * grid * 3
        rng = np.random.default_rng(seed)
        self._proj = rng.standard_normal((n_in, output_dim)) / math.sqrt(n_in)

    def _pool(self, img):
        h, w, _ = img.shape
        g = self.grid
        rows = np.arange(h) * g // h
        cols = np.arange(w) * g // w
        pooled = np.zeros((g, g, 3), dtype=np.float64)
        np.add.at(pooled, (rows[:, None], cols[None, :]), img)
        counts = np.bincount(rows, minlength=g)[:, None] * np.bincount(cols, minlength=g)[None, :]
        return pooled / counts[:, :, None]

    def __call__(self, image):
        img = np.asarray(image, dtype=np.float64)
        if img.ndim == 2:
            img = img[:, :, None]
        if img.shape[2] == 1:
            img = np.repeat(img, 3, axis=2)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
        if img.shape[0] < self.grid or img.shape[1] < self.grid:
            raise ValueError(
                f"image {img.shape[:2]} smaller than the {self.grid}x{self.grid} grid"
            )
        return self._pool(img).ravel() @ self._proj


def inception_extractor(device="cpu"):
    """Optional Inception-V3 pool3 feature extractor (2048-d).

    Requires torchvision plus a downloaded weight file; nothing is
    bundled. Returns a callable matching the extractor interface.
    """
    import torch
    from torchvision import models, transforms

    net = models.inception_v3(weights=models.Inception_V3_Weights.DEFAULT)
    net.fc = torch.nn.Identity()
    net.eval().to(device)
    resize = transforms.Resize((299, 299), antialias=True)

    def extract(image):
        img = np.asarray(image, dtype=np.float32)
        if img.ndim == 2:
            img = img[:, :, None]
        if img.shape[2] == 1:
            img = np.repeat(img, 3, axis=2)
        t = torch.from_numpy(img.transpose(2, 0, 1))[None].to(device)
        t = resize(t)
        t = (t - 0.5) / 0.5
        with torch.no_grad():
            feat = net(t)
        return feat[0].cpu().numpy().astype(np.float64)

    return extract


# ---------------------------------------------------------------------------
# dataset evaluation

@dataclass
class BucketMetrics:
    count: int
    l1_percent: float
    psnr_db: float
    ssim: float
    fid: float | None = None


@dataclass
class MetricsReport:
    """Per-bucket and overall metric aggregates.

    per_bucket maps bucket index -> BucketMetrics; buckets with no masks
    are simply absent. Scalar metrics are means of per-image values; fid
    (when an extractor is supplied) is computed over each bucket's
    collections and over the union.
    """

    per_bucket: dict
    overall: BucketMetrics

    def to_json(self):
        doc = {
            "per_bucket": {
                str(k): vars(v) for k, v in sorted(self.per_bucket.items())
            },
            "overall": vars(self.overall),
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        return cls(
            per_bucket={
                int(k): BucketMetrics(**v) for k, v in doc["per_bucket"].items()
            },
            overall=BucketMetrics(**doc["overall"]),
        )


def evaluate_dataset(infer_fn, images, masks_by_bucket, composite=False, extractor=None):
    """Score an inference function over bucketed test masks.

    Parameters
    ----------
    infer_fn : callable(gt_image, mask) -> predicted image
        Receives the clean (H, W, C) image and an (H, W) mask; returns
        the model's prediction. Input composition happens inside the
        model wrapper so stubs can be tested directly.
    images : sequence of (H, W, C) arrays
    masks_by_bucket : mapping bucket index -> sequence of (H, W) masks
        Pairing is deterministic: bucket masks in their given order,
        mask j paired with image j mod len(images).
    composite : bool
        Score out*M + gt*(1-M) instead of the raw prediction.
    extractor : callable or None
        Enables the fid field when given.

    Returns
    -------
    MetricsReport
    """
    if len(images) == 0:
        raise ValueError("empty image set")
    per_bucket = {}
    all_scores = []
    all_gt = []
    all_out = []
    for bucket_index in sorted(masks_by_bucket):
        masks = masks_by_bucket[bucket_index]
        if len(masks) == 0:
            continue
        scores = []
        bucket_gt = []
        bucket_out = []
        for j, mask in enumerate(masks):
            gt = np.asarray(images[j % len(images)], dtype=np.float64)
            out = np.asarray(infer_fn(gt, mask), dtype=np.float64)
            if composite:
                out = composite_output(out, gt, mask)
            scores.append((l1_error(out, gt), psnr(out, gt), ssim(out, gt)))
            bucket_gt.append(gt)
            bucket_out.append(out)
        per_bucket[bucket_index] = _aggregate(scores, bucket_gt, bucket_out, extractor)
        all_scores.extend(scores)
        all_gt.extend(bucket_gt)
        all_out.extend(bucket_out)
    if not per_bucket:
        raise ValueError("no masks in any bucket")
    overall = _aggregate(all_scores, all_gt, all_out, extractor)
    return MetricsReport(per_bucket=per_bucket, overall=overall)


def _aggregate(scores, gt_list, out_list, extractor):
    arr = np.asarray(scores, dtype=np.float64)
    metrics = BucketMetrics(
        count=len(scores),
        l1_percent=float(arr[:, 0].mean()),
        psnr_db=float(arr[:, 1].mean()),
        ssim=float(arr[:, 2].mean()),
    )
    if extractor is not None and len(gt_list) >= 2:
        metrics.fid = float(fid(gt_list, out_list, extractor))
    return metrics
