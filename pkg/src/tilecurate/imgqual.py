"""Image quality metrics (SSIM, PSNR, MSE) and deterministic augmentations.

SSIM follows the canonical Gaussian-window form: local statistics under an
11x11 Gaussian (sigma 1.5), stabilizers C1 = (k1*L)^2 and C2 = (k2*L)^2 with
k1 = 0.01, k2 = 0.03, and the map averaged over all fully-valid window
positions. Color images score as the mean of per-channel SSIM.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


class ContractError(ValueError):
    """An operation was called with inputs that violate its contract."""


@dataclass(frozen=True)
class SsimParams:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window % 2 == 0 or self.window < 3:
            raise ContractError(f"SSIM window must be odd and >= 3, got {self.window}")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps centered on the window."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(x**2) / (2.0 * sigma**2))
    return w / w.sum()


def _local_mean(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    # Separable correlation, then crop to window positions fully inside the
    # image so the border mode never contributes.
    pad = (len(taps) - 1) // 2
    out = ndimage.correlate1d(img, taps, axis=0, mode="nearest")
    out = ndimage.correlate1d(out, taps, axis=1, mode="nearest")
    return out[pad:-pad, pad:-pad]


def _ssim_single(a: np.ndarray, b: np.ndarray, params: SsimParams) -> float:
    taps = gaussian_window(params.window, params.sigma)
    mu_a = _local_mean(a, taps)
    mu_b = _local_mean(b, taps)
    var_a = _local_mean(a * a, taps) - mu_a * mu_a
    var_b = _local_mean(b * b, taps) - mu_b * mu_b
    cov = _local_mean(a * b, taps) - mu_a * mu_b
    c1, c2 = params.c1, params.c2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, params: SsimParams | None = None) -> float:
    """Mean structural similarity of two images in [0, 1] intensity range.

    Accepts HxW or HxWxC arrays; channels are scored independently and
    averaged. Raises ContractError on shape mismatch or images smaller than
    the window.
    """
    params = params or SsimParams()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise ContractError(f"expected HxW or HxWxC image, got ndim={a.ndim}")
    if min(a.shape[0], a.shape[1]) < params.window:
        raise ContractError(
            f"image {a.shape[:2]} smaller than SSIM window {params.window}"
        )
    if a.ndim == 2:
        return _ssim_single(a, b, params)
    return float(
        np.mean([_ssim_single(a[..., c], b[..., c], params) for c in range(a.shape[2])])
    )


def pixel_metrics(a: np.ndarray, b: np.ndarray, dynamic_range: float = 1.0) -> dict:
    """MSE over all pixels/channels and PSNR in dB (math.inf when MSE is 0)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        psnr = math.inf
    else:
        psnr = 10.0 * math.log10(dynamic_range**2 / mse)
    return {"mse": mse, "psnr": psnr}


# --- deterministic augmentation -------------------------------------------

def hflip(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1].copy()


def vflip(img: np.ndarray) -> np.ndarray:
    return img[::-1, :].copy()


def rot90(img: np.ndarray, k: int) -> np.ndarray:
    return np.rot90(img, k, axes=(0, 1)).copy()


@dataclass(frozen=True)
class AugmentationPolicy:
    """Transform families and ranges; draws are keyed by (seed, epoch, index).

    A zero range (or False flag) disables that transform entirely, so the
    all-disabled policy is the exact identity.
    """

    rotate90: bool = True
    flip_horizontal: bool = True
    flip_vertical: bool = True
    affine_degrees: float = 10.0
    shear_degrees: float = 5.0
    color_jitter: float = 0.1
    blur_sigma_max: float = 1.0
    seed: int = 0

    @classmethod
    def disabled(cls, seed: int = 0) -> "AugmentationPolicy":
        return cls(False, False, False, 0.0, 0.0, 0.0, 0.0, seed)


def _affine(img: np.ndarray, angle_deg: float, shear_deg: float) -> np.ndarray:
    theta = math.radians(angle_deg)
    sh = math.tan(math.radians(shear_deg))
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    shear = np.array([[1.0, sh], [0.0, 1.0]])
    m = rot @ shear
    center = (np.array(img.shape[:2], dtype=np.float64) - 1.0) / 2.0
    offset = center - m @ center
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[..., c] = ndimage.affine_transform(
            img[..., c], m, offset=offset, order=1, mode="reflect"
        )
    return out


def _jitter(img: np.ndarray, rng: np.random.Generator, amount: float) -> np.ndarray:
    b, c, s = 1.0 + rng.uniform(-amount, amount, size=3)
    out = img * b
    mean = out.mean()
    out = (out - mean) * c + mean
    gray = out.mean(axis=2, keepdims=True)
    out = gray + (out - gray) * s
    return np.clip(out, 0.0, 1.0)


def apply_augmentation(
    tile: np.ndarray, policy: AugmentationPolicy, index: int, epoch: int = 0
) -> np.ndarray:
    """Augment one HxWxC tile; deterministic for fixed (policy, index, epoch)."""
    if tile.ndim != 3 or tile.shape[0] != tile.shape[1]:
        raise ContractError(f"expected square HxWxC tile, got shape {tile.shape}")
    rng = np.random.default_rng([policy.seed & 0x7FFFFFFF, epoch, index])
    out = np.asarray(tile, dtype=np.float32)
    if policy.rotate90:
        out = rot90(out, int(rng.integers(0, 4)))
    if policy.flip_horizontal and rng.random() < 0.5:
        out = hflip(out)
    if policy.flip_vertical and rng.random() < 0.5:
        out = vflip(out)
    if policy.affine_degrees > 0 or policy.shear_degrees > 0:
        angle = rng.uniform(-policy.affine_degrees, policy.affine_degrees)
        shear = rng.uniform(-policy.shear_degrees, policy.shear_degrees)
        out = _affine(out, angle, shear)
    if policy.color_jitter > 0:
        out = _jitter(out, rng, policy.color_jitter)
    if policy.blur_sigma_max > 0:
        sigma = rng.uniform(0.0, policy.blur_sigma_max)
        if sigma > 1e-3:
            out = ndimage.gaussian_filter(out, sigma=(sigma, sigma, 0.0))
    return np.clip(out, 0.0, 1.0).astype(np.float32)
