"""Classical small-target detector and precision/recall scoring.

detect(): white top-hat with a disk structuring element, global threshold at
median + k * MAD of the response map, 8-connected components filtered by
area, tight bounding boxes. Scores are component peak responses normalized by
the global response maximum, so they order detections within one image.

match_and_score(): greedy one-to-one matching in descending score order; a
detection is a true positive when its best IoU against a still-unmatched
ground-truth box reaches the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.ndimage import find_objects, label, white_tophat

from .errors import ParameterError
from .image import GrayImage
from .synthesis import BBox

__all__ = ["DetectParams", "Detection", "PrReport", "detect", "iou", "match_and_score"]


@dataclass(frozen=True)
class DetectParams:
    tophat_radius: int = 7
    threshold_k: float = 5.0
    min_area: int = 2
    max_area: int = 2000

    def __post_init__(self):
        if self.tophat_radius < 1:
            raise ParameterError("tophat_radius must be >= 1")
        if self.min_area < 1 or self.max_area < self.min_area:
            raise ParameterError("need 1 <= min_area <= max_area")


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ParameterError(f"score must be in [0,1], got {self.score}")


@dataclass(frozen=True)
class PrReport:
    tp: int
    fp: int
    fn: int
    iou_threshold: float

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if (self.tp + self.fp) else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 0.0


@lru_cache(maxsize=8)
def _disk(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return (xx * xx + yy * yy) <= radius * radius


_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


def tophat_response(img: GrayImage, radius: int) -> np.ndarray:
    if min(img.shape) <= 2 * radius + 1:
        raise ParameterError(f"image {img.shape} smaller than structuring element radius {radius}")
    return white_tophat(img.pixels, footprint=_disk(radius))


def response_threshold(response: np.ndarray, k: float) -> float:
    med = float(np.median(response))
    mad = float(np.median(np.abs(response - med)))
    return med + k * mad


def detect(img: GrayImage, params: DetectParams = DetectParams()) -> list[Detection]:
    response = tophat_response(img, params.tophat_radius)
    threshold = response_threshold(response, params.threshold_k)
    above = response > threshold
    if not above.any():
        return []
    global_max = float(response.max())
    if global_max <= 0.0:
        return []
    labels, n = label(above, structure=_EIGHT_CONNECTED)
    out: list[Detection] = []
    for i, sl in enumerate(find_objects(labels)):
        if sl is None:
            continue
        component = labels[sl] == i + 1
        area = int(component.sum())
        if area < params.min_area or area > params.max_area:
            continue
        peak = float(response[sl][component].max())
        y0, x0 = sl[0].start, sl[1].start
        bb = BBox(x0, y0, sl[1].stop - x0, sl[0].stop - y0)
        out.append(Detection(bb, peak / global_max))
    return out


def iou(a: BBox, b: BBox) -> float:
    ix0 = max(a.x, b.x)
    iy0 = max(a.y, b.y)
    ix1 = min(a.x + a.w, b.x + b.w)
    iy1 = min(a.y + a.h, b.y + b.h)
    iw = max(ix1 - ix0, 0)
    ih = max(iy1 - iy0, 0)
    inter = iw * ih
    if inter == 0:
        return 0.0
    return inter / (a.w * a.h + b.w * b.h - inter)


def match_and_score(dets, gts, iou_threshold: float = 0.5) -> PrReport:
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    matched = [False] * len(gts)
    tp = 0
    for di in order:
        best_iou, best_gt = 0.0, -1
        for gi, gt in enumerate(gts):
            if matched[gi]:
                continue
            v = iou(dets[di].bbox, gt)
            if v > best_iou:
                best_iou, best_gt = v, gi
        if best_gt >= 0 and best_iou >= iou_threshold:
            matched[best_gt] = True
            tp += 1
    return PrReport(tp=tp, fp=len(dets) - tp, fn=len(gts) - tp, iou_threshold=iou_threshold)
