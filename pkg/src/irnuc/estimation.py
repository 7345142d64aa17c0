"""Bias-field coefficient estimation and image correction.

Two estimators share one contract:

* ``fit_paired`` sees both the degraded image Y and the clear image C and
  solves the exact least-squares problem on the difference Y - C. It is the
  oracle everything else is measured against.
* ``fit_blind`` sees only Y. Pipeline: optional 2x downsample, heavy Gaussian
  smoothing, then iteratively reweighted least squares with Tukey bisquare
  weights. The design-matrix columns are preprocessed with the same
  downsample+blur operator as the image, so a pure polynomial field is
  recovered exactly (including boundary-replication effects); the smoothing
  only has to suppress scene content, not survive it.

Blind corrections are mean-preserving: absolute scene brightness and a
constant bias are indistinguishable from Y alone, so the fitted constant is
replaced by the value that makes the correction field average to zero over
the image grid. The removed constant is reported on the FitResult.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.ndimage import convolve1d

from .biasfield import (
    CoeffVector,
    CoordNorm,
    coeff_count,
    eval_field_array,
    grid_mean_of_field,
    term_orders,
)
from .errors import NumericalError, ParameterError
from .image import GrayImage, blur_vector, gaussian_kernel

__all__ = ["BlindFitParams", "FitResult", "correct", "fit_blind", "fit_paired"]

TUKEY_C_FACTOR = 4.685


@dataclass(frozen=True)
class FitResult:
    coeffs: CoeffVector
    residual_rms: float
    condition_estimate: float
    method: str  # "paired" | "blind"
    coord: CoordNorm = CoordNorm()
    removed_constant: float = 0.0

    def __post_init__(self):
        if self.residual_rms < 0:
            raise ParameterError("residual_rms must be >= 0")
        if self.method not in ("paired", "blind"):
            raise ParameterError(f"unknown fit method {self.method!r}")


@dataclass(frozen=True)
class BlindFitParams:
    blur_sigma: float = 25.0
    downsample_first: bool = True
    robust_iters: int = 3
    # Pixel stride for the least-squares stage. The smoothed image carries no
    # information below the blur scale, so fitting on a strided subset changes
    # nothing statistically and keeps pure-field recovery exact.
    sample_stride: int = 2


def _power_sums(v: np.ndarray, max_power: int) -> np.ndarray:
    return np.array([(v**p).sum() for p in range(max_power + 1)])


@lru_cache(maxsize=32)
def _paired_system(width: int, height: int, degree: int, mode: str):
    """Gram matrix, its Cholesky factor and condition number (data independent)."""
    coord = CoordNorm(mode)
    xs = coord.x_coords(width)
    ys = coord.y_coords(height)
    sx = _power_sums(xs, 2 * degree)
    sy = _power_sums(ys, 2 * degree)
    orders = term_orders(degree)
    n = len(orders)
    gram = np.empty((n, n))
    for i, (t, s) in enumerate(orders):
        for j, (t2, s2) in enumerate(orders):
            gram[i, j] = sx[t + t2] * sy[s + s2]
    cond = float(np.linalg.cond(gram))
    try:
        factor = cho_factor(gram)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
        raise NumericalError(f"rank-deficient grid: {exc}", condition=cond) from exc
    vx = np.column_stack([xs**p for p in range(degree + 1)])
    vy = np.column_stack([ys**p for p in range(degree + 1)])
    return factor, cond, vx, vy


def fit_paired(
    degraded: GrayImage,
    clear: GrayImage,
    degree: int = 3,
    coord: CoordNorm = CoordNorm(),
) -> FitResult:
    """Least-squares fit of (degraded - clear) onto the monomial basis.

    Solved through the normal equations with a symmetric positive-definite
    factorization; the Gram matrix only depends on (size, degree, coord) and
    is cached.
    """
    if degraded.shape != clear.shape:
        raise ParameterError(
            f"image sizes differ: {degraded.shape} vs {clear.shape}"
        )
    n = coeff_count(degree)
    if degraded.width * degraded.height < n:
        raise ParameterError(f"need at least {n} pixels for degree {degree}")
    h, w = degraded.shape
    factor, cond, vx, vy = _paired_system(w, h, degree, coord.mode)
    diff = degraded.pixels - clear.pixels
    proj = vy.T @ diff @ vx  # proj[s, t] = sum_ij diff * x^t y^s
    orders = term_orders(degree)
    b = np.array([proj[s, t] for (t, s) in orders])
    try:
        a = cho_solve(factor, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"degenerate normal equations: {exc}", condition=cond) from exc
    coeffs = CoeffVector(degree, a)
    resid = diff - eval_field_array(coeffs, w, h, coord)
    rms = float(np.sqrt(np.mean(resid * resid)))
    return FitResult(coeffs, rms, cond, "paired", coord)


def _pooled_axis(v: np.ndarray) -> np.ndarray:
    """Coordinates of 2x-pooled pixels in the source frame (pairwise means)."""
    m = v.size // 2
    if m == 0:
        return v.copy()
    return 0.5 * (v[: 2 * m : 2] + v[1 : 2 * m : 2])


def _pool2(arr: np.ndarray) -> np.ndarray:
    h, w = arr.shape
    h2, w2 = max(h // 2, 1), max(w // 2, 1)
    ph, pw = min(2 * h2, h), min(2 * w2, w)
    return arr[:ph, :pw].reshape(h2, ph // h2, w2, pw // w2).mean(axis=(1, 3))


@lru_cache(maxsize=16)
def _blind_design(width: int, height: int, degree: int, mode: str, sigma: float, down: bool, stride: int):
    """Strided design matrix whose columns went through the image preprocessing.

    Returns (design, cholesky factor of design' design, cond of that Gram).
    """
    coord = CoordNorm(mode)
    xs = coord.x_coords(width)
    ys = coord.y_coords(height)
    if down:
        xs, ys = _pooled_axis(xs), _pooled_axis(ys)
        sigma = sigma / 2.0
    bx = np.column_stack([blur_vector(xs**p, sigma) for p in range(degree + 1)])[::stride]
    by = np.column_stack([blur_vector(ys**p, sigma) for p in range(degree + 1)])[::stride]
    orders = term_orders(degree)
    design = np.empty((bx.shape[0] * by.shape[0], len(orders)))
    for idx, (t, s) in enumerate(orders):
        design[:, idx] = np.outer(by[:, s], bx[:, t]).ravel()
    design.setflags(write=False)
    gram = design.T @ design
    cond = float(np.linalg.cond(gram))
    factor = cho_factor(gram)
    return design, factor, cond


def _weighted_solve(design: np.ndarray, data: np.ndarray, weights: np.ndarray):
    dw = design * weights[:, None]
    gram = dw.T @ design
    rhs = dw.T @ data
    cond = float(np.linalg.cond(gram))
    try:
        factor = cho_factor(gram)
        sol = cho_solve(factor, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"weighted normal equations degenerate: {exc}", condition=cond) from exc
    return sol, cond


def fit_blind(
    degraded: GrayImage,
    degree: int = 3,
    coord: CoordNorm = CoordNorm(),
    params: BlindFitParams = BlindFitParams(),
) -> FitResult:
    """Estimate the smooth field from the degraded image alone.

    Tukey reweighting uses c = 4.685 * MAD of the current residuals (MAD about
    the median); pixels with |r| >= c get zero weight. A vanishing MAD means
    the fit is already interpolating and iteration stops.
    """
    if params.blur_sigma <= 0:
        raise ParameterError(f"blur_sigma must be > 0, got {params.blur_sigma}")
    if params.robust_iters < 0:
        raise ParameterError("robust_iters must be >= 0")
    if params.sample_stride < 1:
        raise ParameterError("sample_stride must be >= 1")
    h, w = degraded.shape
    arr = degraded.pixels
    sigma = params.blur_sigma
    if params.downsample_first:
        arr = _pool2(arr)
        sigma = sigma / 2.0
    stride = params.sample_stride
    if (arr[::stride, ::stride]).size < coeff_count(degree):
        raise ParameterError(
            f"image too small after preprocessing for degree {degree}"
        )
    kern = gaussian_kernel(sigma)
    smooth = convolve1d(convolve1d(arr, kern, axis=1, mode="nearest"), kern, axis=0, mode="nearest")
    design, factor0, cond = _blind_design(
        w, h, degree, coord.mode, params.blur_sigma, params.downsample_first, stride
    )
    data = smooth[::stride, ::stride].ravel()
    sol = cho_solve(factor0, design.T @ data)
    for _ in range(params.robust_iters):
        resid = data - design @ sol
        med = np.median(resid)
        mad = np.median(np.abs(resid - med))
        c = TUKEY_C_FACTOR * mad
        if c == 0.0:
            break
        u = resid / c
        weights = np.where(np.abs(u) < 1.0, (1.0 - u * u) ** 2, 0.0)
        if not np.any(weights > 0):
            raise NumericalError("all robust weights vanished", condition=cond)
        sol, cond = _weighted_solve(design, data, weights)
    resid = data - design @ sol
    rms = float(np.sqrt(np.mean(resid * resid)))
    coeffs = CoeffVector(degree, sol)
    # Mean-preserving correction: shift the constant so the fitted field
    # averages to zero over the full-resolution grid it will be applied to.
    removed = grid_mean_of_field(coeffs, w, h, coord)
    arr_out = coeffs.coeffs.copy()
    arr_out[0] -= removed
    return FitResult(CoeffVector(degree, arr_out), rms, cond, "blind", coord, removed)


def correct(degraded: GrayImage, fit: FitResult) -> GrayImage:
    """R = Y - fitted field, evaluated on Y's own grid; unclamped."""
    h, w = degraded.shape
    field = eval_field_array(fit.coeffs, w, h, fit.coord)
    return GrayImage(degraded.pixels - field, degraded.warnings)
