"""Supervision losses on single-channel feature maps.

Feature stacks hold exactly four stages. For the mask/BCE loss the stage
values are treated as probabilities and clamped to [eps, 1-eps] with
eps = 1e-7; the cross-entropy is averaged per pixel, then over stages, so
stage resolution does not change the scale. The feature-alignment loss is the
mean over stages of 1 - cosine similarity of the flattened maps; a row-wise
cosine-similarity matrix is also exposed for analysis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFeatureError, ParameterError
from .synthesis import BBox

__all__ = [
    "BinaryMask",
    "FeatureStack",
    "br_loss",
    "cos_sim",
    "cos_sim_matrix",
    "lambda_schedule",
    "make_mask",
    "resize_mask",
    "tebs_loss",
    "union_loss",
]

BCE_EPS = 1e-7
STAGE_COUNT = 4


@dataclass(frozen=True)
class BinaryMask:
    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise ParameterError("mask must be 2-D")
        if not np.isin(arr, (0, 1)).all():
            raise ParameterError("mask values must be 0 or 1")
        arr = arr.astype(np.uint8)
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


@dataclass(frozen=True)
class FeatureStack:
    stages: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.stages) != STAGE_COUNT:
            raise ParameterError(f"feature stack must hold exactly {STAGE_COUNT} stages")
        frozen = []
        for i, st in enumerate(self.stages):
            arr = np.asarray(st, dtype=np.float64)
            if arr.ndim != 2:
                raise ParameterError(f"stage {i} must be a 2-D map")
            if not np.all(np.isfinite(arr)):
                raise ParameterError(f"stage {i} contains non-finite values")
            arr = arr.copy()
            arr.setflags(write=False)
            frozen.append(arr)
        object.__setattr__(self, "stages", tuple(frozen))


def make_mask(bboxes, width: int, height: int) -> BinaryMask:
    """1 inside the union of the boxes, 0 elsewhere."""
    bits = np.zeros((height, width), dtype=np.uint8)
    for bb in bboxes:
        if not isinstance(bb, BBox):
            bb = BBox(*bb)
        if not bb.within(width, height):
            raise ParameterError(f"bbox {bb} outside {width}x{height}")
        bits[bb.y : bb.y + bb.h, bb.x : bb.x + bb.w] = 1
    return BinaryMask(bits)


def _pool_bounds(n_src: int, n_dst: int) -> list[tuple[int, int]]:
    # Output cell j covers source interval [j*n_src/n_dst, (j+1)*n_src/n_dst);
    # any partially covered source pixel counts.
    out = []
    for j in range(n_dst):
        lo = (j * n_src) // n_dst
        hi = -((-(j + 1) * n_src) // n_dst)  # ceil
        out.append((lo, max(hi, lo + 1)))
    return out


def resize_mask(mask: BinaryMask, width: int, height: int) -> BinaryMask:
    """Max-pool over the preimage of each output cell."""
    if width < 1 or height < 1:
        raise ParameterError(f"bad target size {width}x{height}")
    if (width, height) == (mask.width, mask.height):
        return mask
    rows = _pool_bounds(mask.height, height)
    cols = _pool_bounds(mask.width, width)
    bits = np.zeros((height, width), dtype=np.uint8)
    src = mask.bits
    for j, (ry0, ry1) in enumerate(rows):
        band = src[ry0:ry1]
        for i, (cx0, cx1) in enumerate(cols):
            bits[j, i] = band[:, cx0:cx1].max()
    return BinaryMask(bits)


def tebs_loss(mask: BinaryMask, features: FeatureStack) -> float:
    """Mean over 4 stages of pixel-mean BCE against the stage-resized mask."""
    total = 0.0
    for st in features.stages:
        h, w = st.shape
        m = resize_mask(mask, w, h).bits.astype(np.float64)
        f = np.clip(st, BCE_EPS, 1.0 - BCE_EPS)
        bce = -(m * np.log(f) + (1.0 - m) * np.log(1.0 - f))
        total += float(np.mean(bce))
    return total / STAGE_COUNT


def cos_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of the flattened maps."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch: {a.shape} vs {b.shape}")
    av, bv = a.ravel(), b.ravel()
    na, nb = np.linalg.norm(av), np.linalg.norm(bv)
    if na == 0.0 or nb == 0.0:
        raise DegenerateFeatureError("cosine similarity undefined for zero-norm map")
    return float(np.dot(av, bv) / (na * nb))


def cos_sim_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise similarity: entry (i, j) = cos(a_i, b_j) for rows a_i, b_j."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ParameterError("feature maps must be 2-D")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    for name, norms in (("first", na), ("second", nb)):
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise DegenerateFeatureError(f"zero-norm row {int(zero[0])} in {name} map")
    return (a @ b.T) / np.outer(na, nb)


def br_loss(clear_features: FeatureStack, corrected_features: FeatureStack) -> float:
    """Mean over stages of (1 - cosine similarity); 0 iff all stages align."""
    total = 0.0
    for fc, fr in zip(clear_features.stages, corrected_features.stages):
        if fc.shape != fr.shape:
            raise ParameterError(f"stage shape mismatch: {fc.shape} vs {fr.shape}")
        total += 1.0 - cos_sim(fc, fr)
    return total / STAGE_COUNT


def lambda_schedule(epoch: int) -> float:
    """1.0 through epoch 20, 0.01 afterwards."""
    if epoch < 1:
        raise ParameterError(f"epoch must be >= 1, got {epoch}")
    return 1.0 if epoch <= 20 else 0.01


def union_loss(cls: float, reg: float, tebs: float, epoch: int, br: float) -> float:
    """cls + reg + lambda(epoch) * tebs + br."""
    for name, v in (("cls", cls), ("reg", reg), ("tebs", tebs), ("br", br)):
        if not np.isfinite(v) or v < 0:
            raise ParameterError(f"{name} component must be finite and >= 0, got {v}")
    return cls + reg + lambda_schedule(epoch) * tebs + br
