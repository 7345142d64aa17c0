"""Image-quality and detectability metrics: PSNR, SSIM, coefficient loss, SCR.

PSNR of identical images returns math.inf (the documented sentinel). SSIM is
the mean of local scores over an 11x11 Gaussian window (sigma 1.5) with
C1 = (0.01*peak)^2, C2 = (0.03*peak)^2 and peak = 1, computed on unclamped
intensities; windows are fully interior (no padding).

SCR = |mean(target) - mean(ring)| / std(ring), with the ring a d-pixel border
around the target box, clipped to the image. The standard deviation is the
population form. SCRG = SCR(corrected) / SCR(original).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .biasfield import CoeffVector
from .errors import DegenerateBackgroundError, ParameterError
from .image import GrayImage
from .synthesis import BBox

__all__ = ["ScrSpec", "coeff_loss", "psnr", "scr", "scrg", "ssim"]


def psnr(a: GrayImage, b: GrayImage, peak: float = 1.0) -> float:
    if a.shape != b.shape:
        raise ParameterError(f"image sizes differ: {a.shape} vs {b.shape}")
    diff = a.pixels - b.pixels
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


def _ssim_kernel() -> np.ndarray:
    r = _SSIM_WINDOW // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * _SSIM_SIGMA * _SSIM_SIGMA))
    return k / k.sum()


def _windowed(arr: np.ndarray, k: np.ndarray) -> np.ndarray:
    r = k.size // 2
    out = convolve1d(convolve1d(arr, k, axis=1, mode="constant"), k, axis=0, mode="constant")
    return out[r:-r, r:-r]


def ssim(a: GrayImage, b: GrayImage) -> float:
    if a.shape != b.shape:
        raise ParameterError(f"image sizes differ: {a.shape} vs {b.shape}")
    if min(a.shape) < _SSIM_WINDOW:
        raise ParameterError(f"images must be at least {_SSIM_WINDOW} pixels on each side")
    c1 = 0.01**2
    c2 = 0.03**2
    k = _ssim_kernel()
    x, y = a.pixels, b.pixels
    mu_x = _windowed(x, k)
    mu_y = _windowed(y, k)
    xx = _windowed(x * x, k) - mu_x * mu_x
    yy = _windowed(y * y, k) - mu_y * mu_y
    xy = _windowed(x * y, k) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def coeff_loss(predicted: CoeffVector, truth: CoeffVector, l1: bool = False) -> float:
    """Mean over the N coefficients of squared differences (or |diff| with l1)."""
    if predicted.degree != truth.degree:
        raise ParameterError(
            f"degree mismatch: {predicted.degree} vs {truth.degree}"
        )
    d = predicted.coeffs - truth.coeffs
    if l1:
        return float(np.mean(np.abs(d)))
    return float(np.mean(d * d))


@dataclass(frozen=True)
class ScrSpec:
    bbox: BBox
    neighborhood: int = 5

    def __post_init__(self):
        if self.neighborhood < 1:
            raise ParameterError("neighborhood width d must be >= 1")

    def regions(self, width: int, height: int):
        """(target mask slice, ring boolean mask) clipped to image bounds."""
        b, d = self.bbox, self.neighborhood
        if not b.within(width, height):
            raise ParameterError(f"target box {b} outside {width}x{height}")
        ox0, oy0 = max(b.x - d, 0), max(b.y - d, 0)
        ox1, oy1 = min(b.x + b.w + d, width), min(b.y + b.h + d, height)
        ring = np.zeros((height, width), dtype=bool)
        ring[oy0:oy1, ox0:ox1] = True
        ring[b.y : b.y + b.h, b.x : b.x + b.w] = False
        if not ring.any():
            raise ParameterError("background ring is empty")
        return (slice(b.y, b.y + b.h), slice(b.x, b.x + b.w)), ring


def scr(img: GrayImage, spec: ScrSpec) -> float:
    target_sl, ring = spec.regions(img.width, img.height)
    mu_t = float(np.mean(img.pixels[target_sl]))
    bg = img.pixels[ring]
    mu_b = float(np.mean(bg))
    sigma_b = float(np.std(bg))
    if sigma_b == 0.0:
        raise DegenerateBackgroundError("background ring has zero variance")
    return abs(mu_t - mu_b) / sigma_b


def scrg(original: GrayImage, corrected: GrayImage, spec: ScrSpec) -> float:
    scr_in = scr(original, spec)
    if scr_in == 0.0:
        raise ParameterError("SCR of the original image is zero; gain undefined")
    return scr(corrected, spec) / scr_in
