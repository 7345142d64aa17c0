"""Synthetic scene and corpus generation: Y = C + k * B with annotated targets.

Backgrounds are procedural. Two properties matter for downstream contracts:

* Every background carries fine per-pixel grain. The detector thresholds at
  median + k * MAD of a morphological response map; on a perfectly smooth
  scene both statistics are zero and the threshold collapses, so the grain is
  what gives the false-alarm control a stable floor.
* ``cloud-noise`` backgrounds are detrended against the default blind
  estimator: the smooth component the estimator would attribute to a bias
  field is subtracted once (shifting data by an in-model field shifts the fit
  by exactly that field, weights included, so one subtraction zeroes the fit).
  Without this, the random large-scale trend of any finite noise texture is
  genuinely indistinguishable from bias and no blind method could meet the
  leak contract.

Corpus layout: clear/NNNNN.png, degraded/NNNNN.png, meta/NNNNN.json and a
single annotations.csv with header image,x,y,w,h. Degraded images may exceed
[0,1]; they are stored 16-bit after an affine map recorded in the sidecar as
"scale"/"offset" (load_scene undoes it).
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .biasfield import (
    AmplitudeSpec,
    CoeffVector,
    CoordNorm,
    eval_field_array,
    sample_coeffs,
    write_sidecar,
    read_sidecar,
    zero_mean_coeffs,
)
from .errors import ImageIOError, ParameterError
from .image import GrayImage, load_image, save_image
from . import estimation

__all__ = [
    "BBox",
    "SceneRecord",
    "SynthConfig",
    "generate_corpus",
    "inject_target",
    "load_scene",
    "make_background",
    "synthesize_degraded",
]

BACKGROUND_KINDS = ("flat", "gradient", "cloud-noise", "structured")

# Target size bins by bounding-box side length (pixels).
SCALE_BINS = ((2, 10), (10, 20), (20, 30), (30, 41))
DEFAULT_SCALE_MIX = (0.35, 0.50, 0.12, 0.03)

_BBOX_CONTOUR_FACTOR = math.sqrt(2.0 * math.log(10.0))  # 10%-of-peak radius / sigma


@dataclass(frozen=True)
class BBox:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ParameterError(f"bbox extents must be >= 1, got {self.w}x{self.h}")

    def within(self, width: int, height: int) -> bool:
        return 0 <= self.x and 0 <= self.y and self.x + self.w <= width and self.y + self.h <= height


@dataclass(frozen=True)
class SceneRecord:
    clear: GrayImage
    coeffs: CoeffVector
    severity: float
    degraded: GrayImage
    annotations: tuple[BBox, ...] = ()

    def __post_init__(self):
        if self.severity < 0:
            raise ParameterError("severity k must be >= 0")
        for bb in self.annotations:
            if not bb.within(self.clear.width, self.clear.height):
                raise ParameterError(f"annotation {bb} outside image bounds")


def synthesize_degraded(
    clear: GrayImage, coeffs: CoeffVector, k: float, coord: CoordNorm = CoordNorm()
) -> GrayImage:
    """Exact pixelwise Y = C + k * B; no clamping."""
    field_arr = eval_field_array(coeffs, clear.width, clear.height, coord)
    return GrayImage(clear.pixels + k * field_arr, clear.warnings)


# ---------------------------------------------------------------------------
# Backgrounds
# ---------------------------------------------------------------------------


def _bilinear_upsample(grid: np.ndarray, width: int, height: int) -> np.ndarray:
    gh, gw = grid.shape
    gx = np.linspace(0.0, gw - 1.0, width)
    gy = np.linspace(0.0, gh - 1.0, height)
    x0 = np.floor(gx).astype(int)
    x1 = np.minimum(x0 + 1, gw - 1)
    fx = gx - x0
    y0 = np.floor(gy).astype(int)
    y1 = np.minimum(y0 + 1, gh - 1)
    fy = (gy - y0)[:, None]
    top = grid[np.ix_(y0, x0)] * (1 - fx) + grid[np.ix_(y0, x1)] * fx
    bot = grid[np.ix_(y1, x0)] * (1 - fx) + grid[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def _blur_arr(arr: np.ndarray, sigma: float) -> np.ndarray:
    from scipy.ndimage import convolve1d

    from .image import gaussian_kernel

    k = gaussian_kernel(sigma)
    return convolve1d(convolve1d(arr, k, axis=1, mode="nearest"), k, axis=0, mode="nearest")


def _value_noise(rng, width: int, height: int, waves, weights) -> np.ndarray:
    acc = np.zeros((height, width))
    total = 0.0
    for wavelength, weight in zip(waves, weights):
        gw = max(width // wavelength, 1) + 2
        gh = max(height // wavelength, 1) + 2
        acc += weight * _bilinear_upsample(rng.random((gh, gw)), width, height)
        total += weight
    return acc / total


def _detrend_for_blind(arr: np.ndarray) -> np.ndarray:
    """Remove the non-constant component the default blind fit would report."""
    fit = estimation.fit_blind(GrayImage(arr))
    # fit.coeffs already has a zero-mean field; subtracting it keeps the mean.
    return arr - eval_field_array(fit.coeffs, arr.shape[1], arr.shape[0], fit.coord)


def _clouds(rng, width, height, lo=0.28, hi=0.47, grain=0.012, detrend=True):
    acc = _value_noise(rng, width, height, (48, 24), (1.0, 0.15))
    acc = _blur_arr(acc, 1.5)
    m0, m1 = acc.min(), acc.max()
    acc = lo + (hi - lo) * (acc - m0) / (m1 - m0) if m1 > m0 else np.full_like(acc, lo)
    if grain:
        acc = acc + grain * (rng.random((height, width)) - 0.5)
    if detrend:
        acc = _detrend_for_blind(acc)
    return acc


def _structured(
    rng,
    width,
    height,
    grain=0.02,
    n_rect=(3, 7),
    step_range=(0.15, 0.45),
    rect_w=(60, 280),
    rect_h=(40, 220),
    edge_blur=2.5,
):
    base = _clouds(rng, width, height, grain=0.0, detrend=False)
    n = int(rng.integers(n_rect[0], n_rect[1] + 1))
    rects = np.zeros((height, width))
    for _ in range(n):
        rw = int(rng.integers(rect_w[0], min(rect_w[1], width)))
        rh = int(rng.integers(rect_h[0], min(rect_h[1], height)))
        x0 = int(rng.integers(0, max(width - rw, 1)))
        y0 = int(rng.integers(0, max(height - rh, 1)))
        step = rng.uniform(*step_range) * (1.0 if rng.random() < 0.7 else -1.0)
        rects[y0 : y0 + rh, x0 : x0 + rw] += step
    out = base + _blur_arr(rects, edge_blur)
    out = out + grain * (rng.random((height, width)) - 0.5)
    return np.clip(out, 0.02, 0.98)


def make_background(kind: str, seed, width: int, height: int, **params) -> GrayImage:
    """Deterministic procedural background of the given kind.

    Extra keyword parameters tune the generator (grain level, building count
    and step range for ``structured``); defaults reproduce the stock corpora.
    """
    if kind not in BACKGROUND_KINDS:
        raise ParameterError(f"background kind must be one of {BACKGROUND_KINDS}, got {kind!r}")
    if width < 1 or height < 1:
        raise ParameterError(f"bad dimensions {width}x{height}")
    rng = np.random.default_rng(seed)
    if kind == "flat":
        return GrayImage(np.full((height, width), 0.3))
    if kind == "gradient":
        base = rng.uniform(0.3, 0.5)
        gx = rng.uniform(-0.15, 0.15)
        gy = rng.uniform(-0.15, 0.15)
        xs = np.linspace(-1.0, 1.0, width) if width > 1 else np.zeros(1)
        ys = np.linspace(-1.0, 1.0, height) if height > 1 else np.zeros(1)
        arr = base + gx * xs[None, :] + gy * ys[:, None]
        grain = params.get("grain", 0.012)
        arr = arr + grain * (rng.random((height, width)) - 0.5)
        return GrayImage(np.clip(arr, 0.1, 0.9))
    if kind == "cloud-noise":
        return GrayImage(_clouds(rng, width, height, **params))
    return GrayImage(_structured(rng, width, height, **params))


# ---------------------------------------------------------------------------
# Targets
# ---------------------------------------------------------------------------


def bbox_half_side(radius: float) -> int:
    """Half side of the 10%-of-peak contour box: ceil(sigma * sqrt(2 ln 10))."""
    sigma = radius / 2.0
    return max(int(math.ceil(sigma * _BBOX_CONTOUR_FACTOR)), 1)


def inject_target(
    img: GrayImage, center: tuple[int, int], radius: float, contrast: float
) -> tuple[GrayImage, BBox | None]:
    """Add an isotropic Gaussian blob (sigma = radius/2, peak = contrast).

    The blob is truncated at 3 sigma. Returns the image plus the tight
    bounding box of the 10%-of-peak contour; zero contrast leaves the image
    unchanged and yields no box.
    """
    if radius <= 0:
        raise ParameterError(f"radius must be > 0, got {radius}")
    cx, cy = int(center[0]), int(center[1])
    if contrast == 0.0:
        return img, None
    sigma = radius / 2.0
    half = bbox_half_side(radius)
    box = BBox(cx - half, cy - half, 2 * half, 2 * half)
    if not box.within(img.width, img.height):
        raise ParameterError(f"target box {box} does not fit inside {img.width}x{img.height}")
    ext = int(math.ceil(3.0 * sigma))
    y0, y1 = max(cy - ext, 0), min(cy + ext + 1, img.height)
    x0, x1 = max(cx - ext, 0), min(cx + ext + 1, img.width)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    rr2 = (xx - cx) ** 2 + (yy - cy) ** 2
    blob = np.where(rr2 <= ext * ext, contrast * np.exp(-rr2 / (2.0 * sigma * sigma)), 0.0)
    out = np.array(img.pixels)
    out[y0:y1, x0:x1] += blob
    return GrayImage(out, img.warnings), box


def _radius_for_side(rng, side: int) -> float:
    """Radius whose 10%-contour box has exactly the requested side (even)."""
    half = side // 2
    hi = half / (_BBOX_CONTOUR_FACTOR / 2.0)  # radius giving ceil(...) == half at the top
    lo = (half - 1) / (_BBOX_CONTOUR_FACTOR / 2.0)
    return float(rng.uniform(lo + 1e-9, hi))


def _sample_target_geometry(rng, cfg: "SynthConfig"):
    if cfg.target_radius_range is not None:
        radius = float(rng.uniform(*cfg.target_radius_range))
        return radius
    mix = np.asarray(cfg.target_scale_mix, dtype=np.float64)
    mix = mix / mix.sum()
    bin_idx = int(rng.choice(len(SCALE_BINS), p=mix))
    lo, hi = SCALE_BINS[bin_idx]
    sides = [s for s in range(lo, hi) if s % 2 == 0 and s >= 2]
    side = int(rng.choice(sides))
    return _radius_for_side(rng, side)


# ---------------------------------------------------------------------------
# Corpus generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    count: int = 10
    width: int = 640
    height: int = 512
    degree: int = 3
    k: float = 10.0
    seed: int = 0
    background: str = "cloud-noise"
    background_params: dict = field(default_factory=dict)
    amplitude: AmplitudeSpec = field(default_factory=AmplitudeSpec)
    zero_mean_bias: bool = False
    targets_per_image: int = 1
    target_scale_mix: tuple = DEFAULT_SCALE_MIX
    target_radius_range: tuple | None = None
    target_contrast_range: tuple = (0.1, 0.3)
    # "uniform" or "high-gradient": the latter confines centers to pixels at
    # or above the given quantile of |grad(k*B)|.
    placement: str = "uniform"
    placement_quantile: float = 0.9
    min_target_spacing: float = 50.0
    coord: CoordNorm = CoordNorm()

    def __post_init__(self):
        if self.count < 0:
            raise ParameterError("count must be >= 0")
        if self.background not in BACKGROUND_KINDS:
            raise ParameterError(f"unknown background kind {self.background!r}")
        if self.placement not in ("uniform", "high-gradient"):
            raise ParameterError(f"unknown placement {self.placement!r}")
        if self.targets_per_image < 0:
            raise ParameterError("targets_per_image must be >= 0")


def _sample_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(index)])


def build_scene(cfg: SynthConfig, index: int) -> SceneRecord:
    """Deterministically build sample ``index`` of the configured corpus."""
    ss = _sample_seed(cfg.seed, index)
    bg_seed, coeff_seed, tgt_seed = ss.spawn(3)
    clear = make_background(cfg.background, bg_seed, cfg.width, cfg.height, **cfg.background_params)
    coeffs = sample_coeffs(coeff_seed, cfg.degree, cfg.amplitude)
    if cfg.zero_mean_bias:
        coeffs = zero_mean_coeffs(coeffs, cfg.width, cfg.height, cfg.coord)
    rng = np.random.default_rng(tgt_seed)
    boxes: list[BBox] = []
    if cfg.targets_per_image > 0:
        allowed = None
        if cfg.placement == "high-gradient":
            field_arr = cfg.k * eval_field_array(coeffs, cfg.width, cfg.height, cfg.coord)
            gy, gx = np.gradient(field_arr)
            gmag = np.hypot(gx, gy)
            allowed = gmag >= np.quantile(gmag, cfg.placement_quantile)
        placed: list[tuple[int, int]] = []
        tries = 0
        margin = 30
        while len(placed) < cfg.targets_per_image and tries < 5000:
            tries += 1
            cx = int(rng.integers(margin, max(cfg.width - margin, margin + 1)))
            cy = int(rng.integers(margin, max(cfg.height - margin, margin + 1)))
            if allowed is not None and not allowed[cy, cx]:
                continue
            if any((cx - px) ** 2 + (cy - py) ** 2 < cfg.min_target_spacing**2 for px, py in placed):
                continue
            radius = _sample_target_geometry(rng, cfg)
            contrast = float(rng.uniform(*cfg.target_contrast_range))
            try:
                clear, box = inject_target(clear, (cx, cy), radius, contrast)
            except ParameterError:
                continue
            if box is not None:
                boxes.append(box)
                placed.append((cx, cy))
    clear = GrayImage(np.clip(clear.pixels, 0.0, 1.0), clear.warnings)
    degraded = synthesize_degraded(clear, coeffs, cfg.k, cfg.coord)
    return SceneRecord(clear, coeffs, cfg.k, degraded, tuple(boxes))


def _storage_affine(arr: np.ndarray) -> tuple[float, float]:
    """scale/offset mapping arr into [0,1]; identity when already inside."""
    lo, hi = float(arr.min()), float(arr.max())
    if lo >= 0.0 and hi <= 1.0:
        return 1.0, 0.0
    scale = max(hi - lo, 1e-12)
    return scale, lo


def _write_sample(cfg: SynthConfig, root: str, index: int) -> list[tuple[str, BBox]]:
    scene = build_scene(cfg, index)
    name = f"{index:05d}"
    save_image(scene.clear, os.path.join(root, "clear", f"{name}.png"), 16)
    scale, offset = _storage_affine(scene.degraded.pixels)
    stored = GrayImage((scene.degraded.pixels - offset) / scale)
    save_image(stored, os.path.join(root, "degraded", f"{name}.png"), 16)
    write_sidecar(
        os.path.join(root, "meta", f"{name}.json"),
        scene.coeffs,
        cfg.coord,
        cfg.k,
        scale=scale,
        offset=offset,
    )
    return [(f"{name}.png", bb) for bb in scene.annotations]


def generate_corpus(cfg: SynthConfig, out_dir: str, jobs: int = 1) -> None:
    """Write the corpus; byte-identical for a given config regardless of jobs."""
    try:
        for sub in ("clear", "degraded", "meta"):
            os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    except OSError as exc:
        raise ImageIOError(f"cannot create corpus directory: {exc}") from exc
    indices = range(cfg.count)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows_per_sample = list(pool.map(_write_sample, [cfg] * cfg.count, [out_dir] * cfg.count, indices))
    else:
        rows_per_sample = [_write_sample(cfg, out_dir, i) for i in indices]
    with open(os.path.join(out_dir, "annotations.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "x", "y", "w", "h"])
        for rows in rows_per_sample:
            for name, bb in rows:
                writer.writerow([name, bb.x, bb.y, bb.w, bb.h])


def load_scene(corpus_dir: str, index: int):
    """Load (clear, degraded-in-Y-units, sidecar dict) for one sample."""
    name = f"{index:05d}"
    clear_path = os.path.join(corpus_dir, "clear", f"{name}.png")
    degraded_path = os.path.join(corpus_dir, "degraded", f"{name}.png")
    meta_path = os.path.join(corpus_dir, "meta", f"{name}.json")
    for p in (clear_path, degraded_path, meta_path):
        if not os.path.exists(p):
            raise ImageIOError(f"missing corpus file: {p}")
    clear = load_image(clear_path)
    stored = load_image(degraded_path)
    meta = read_sidecar(meta_path)
    scale = float(meta.get("scale", 1.0))
    offset = float(meta.get("offset", 0.0))
    degraded = GrayImage(stored.pixels * scale + offset)
    return clear, degraded, meta


def read_annotations(corpus_dir: str) -> dict[str, list[BBox]]:
    path = os.path.join(corpus_dir, "annotations.csv")
    out: dict[str, list[BBox]] = {}
    if not os.path.exists(path):
        return out
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["image"], []).append(
                BBox(int(row["x"]), int(row["y"]), int(row["w"]), int(row["h"]))
            )
    return out
