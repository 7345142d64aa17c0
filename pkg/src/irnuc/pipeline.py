"""Corpus evaluation pipeline: correct per strategy, measure, detect, report.

Strategies:

* ``direct``         - detect on the degraded images as-is (no correction).
* ``blind-correct``  - estimate the field from the degraded image alone.
* ``paired-correct`` - oracle fit using the stored clear image and the
                       sidecar's true degree; upper bound for any jointly
                       trained system, and labeled as such in reports.

Reports are JSON with per-image rows and aggregates, deterministic for a
given corpus and config (sorted keys, fixed layout). Infinite PSNR values are
serialized as the string "inf". A schema ships with the package
(irnuc/schemas/report.schema.json).
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .detection import DetectParams, Detection, detect, match_and_score
from .errors import ImageIOError, ParameterError
from .estimation import BlindFitParams, correct, fit_blind, fit_paired
from .metrics import ScrSpec, psnr, scr, scrg, ssim
from .synthesis import BBox, load_scene, read_annotations

__all__ = ["PipelineConfig", "emit_pr_curve", "run_pipeline"]

STRATEGIES = ("direct", "blind-correct", "paired-correct")


@dataclass(frozen=True)
class PipelineConfig:
    strategy: str
    corpus: str
    report: str
    degree: int = 3
    iou_threshold: float = 0.5
    detector: DetectParams = field(default_factory=DetectParams)
    estimator: BlindFitParams = field(default_factory=BlindFitParams)
    jobs: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ParameterError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.jobs < 1:
            raise ParameterError("jobs must be >= 1")

    @staticmethod
    def from_dict(data: dict) -> "PipelineConfig":
        det = DetectParams(**data.get("detector", {}))
        est = BlindFitParams(**data.get("estimator", {}))
        keys = {"strategy", "corpus", "report", "degree", "iou_threshold", "jobs", "seed"}
        kwargs = {k: v for k, v in data.items() if k in keys}
        return PipelineConfig(detector=det, estimator=est, **kwargs)


def _corpus_indices(corpus: str) -> list[int]:
    degraded_dir = os.path.join(corpus, "degraded")
    if not os.path.isdir(degraded_dir):
        raise ImageIOError(f"not a corpus directory (no degraded/): {corpus}")
    out = []
    for name in sorted(os.listdir(degraded_dir)):
        stem, ext = os.path.splitext(name)
        if ext == ".png" and stem.isdigit():
            out.append(int(stem))
    return out


def _eval_one(cfg: PipelineConfig, index: int, annotations: dict) -> dict:
    clear, degraded, meta = load_scene(cfg.corpus, index)
    name = f"{index:05d}.png"
    row: dict = {"index": index, "image": name}
    corrected = None
    if cfg.strategy == "blind-correct":
        fit = fit_blind(degraded, cfg.degree, meta["coord"], cfg.estimator)
        corrected = correct(degraded, fit)
    elif cfg.strategy == "paired-correct":
        fit = fit_paired(degraded, clear, meta["coeffs"].degree, meta["coord"])
        corrected = correct(degraded, fit)

    if corrected is not None:
        row["psnr"] = psnr(corrected, clear)
        row["ssim"] = ssim(corrected, clear)
    else:
        row["psnr"] = None
        row["ssim"] = None

    boxes = annotations.get(name, [])
    scr_in, scrg_vals = [], []
    for bb in boxes:
        spec = ScrSpec(bb)
        try:
            s_in = scr(degraded, spec)
        except Exception:
            continue
        scr_in.append(s_in)
        if corrected is not None and s_in > 0:
            try:
                scrg_vals.append(scrg(degraded, corrected, spec))
            except Exception:
                pass
    row["scr_in_mean"] = float(np.mean(scr_in)) if scr_in else None
    row["scrg_mean"] = float(np.mean(scrg_vals)) if scrg_vals else None

    target_img = corrected if corrected is not None else degraded
    dets = detect(target_img, cfg.detector)
    report = match_and_score(dets, boxes, cfg.iou_threshold)
    row["tp"], row["fp"], row["fn"] = report.tp, report.fp, report.fn
    row["detections"] = [
        {"x": d.bbox.x, "y": d.bbox.y, "w": d.bbox.w, "h": d.bbox.h, "score": round(d.score, 9)}
        for d in dets
    ]
    return row


def _encode_floats(obj):
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf"
        return obj
    if isinstance(obj, dict):
        return {k: _encode_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode_floats(v) for v in obj]
    return obj


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Evaluate the corpus and write the JSON report; returns the report dict."""
    indices = _corpus_indices(cfg.corpus)
    missing = []
    for i in indices:
        for sub, ext in (("clear", ".png"), ("meta", ".json")):
            p = os.path.join(cfg.corpus, sub, f"{i:05d}{ext}")
            if not os.path.exists(p):
                missing.append(p)
    if missing:
        raise ImageIOError("missing corpus files: " + ", ".join(missing))
    annotations = read_annotations(cfg.corpus)
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(_eval_one, [cfg] * len(indices), indices, [annotations] * len(indices)))
    else:
        rows = [_eval_one(cfg, i, annotations) for i in indices]
    rows.sort(key=lambda r: r["index"])

    psnrs = [r["psnr"] for r in rows if r["psnr"] is not None]
    ssims = [r["ssim"] for r in rows if r["ssim"] is not None]
    scrgs = [r["scrg_mean"] for r in rows if r["scrg_mean"] is not None]
    tp = sum(r["tp"] for r in rows)
    fp = sum(r["fp"] for r in rows)
    fn = sum(r["fn"] for r in rows)
    aggregate = {
        "images": len(rows),
        "psnr_mean": (math.inf if any(math.isinf(p) for p in psnrs) else float(np.mean(psnrs))) if psnrs else None,
        "ssim_mean": float(np.mean(ssims)) if ssims else None,
        "scrg_mean": float(np.mean(scrgs)) if scrgs else None,
        "tp": tp,
        "fp": fp,
        "fn": fn,
        "precision": tp / (tp + fp) if (tp + fp) else 0.0,
        "recall": tp / (tp + fn) if (tp + fn) else 0.0,
    }
    label = "oracle (upper bound for union)" if cfg.strategy == "paired-correct" else cfg.strategy
    report = {
        "config": {
            "strategy": cfg.strategy,
            "strategy_label": label,
            "corpus": os.path.abspath(cfg.corpus),
            "degree": cfg.degree,
            "iou_threshold": cfg.iou_threshold,
            "detector": {
                "tophat_radius": cfg.detector.tophat_radius,
                "threshold_k": cfg.detector.threshold_k,
                "min_area": cfg.detector.min_area,
                "max_area": cfg.detector.max_area,
            },
            "estimator": {
                "blur_sigma": cfg.estimator.blur_sigma,
                "downsample_first": cfg.estimator.downsample_first,
                "robust_iters": cfg.estimator.robust_iters,
            },
            "seed": cfg.seed,
        },
        "images": rows,
        "aggregate": aggregate,
    }
    encoded = _encode_floats(report)
    os.makedirs(os.path.dirname(os.path.abspath(cfg.report)), exist_ok=True)
    tmp = cfg.report + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(encoded, fh, sort_keys=True, indent=1)
        fh.write("\n")
    os.replace(tmp, cfg.report)
    return encoded


def emit_pr_curve(samples, path: str | None = None, iou_threshold: float = 0.5, thresholds=None):
    """Precision/recall sweep over score thresholds, with trapezoidal AUC.

    ``samples`` is a sequence of (detections, ground_truth_boxes) pairs. For
    each threshold, detections scoring at least that much are matched per
    sample and the counts pooled. Returns (rows, auc) where rows are
    (threshold, precision, recall); when ``path`` is given, also writes a CSV
    with an ``# auc`` footer.
    """
    all_scores = sorted({d.score for dets, _ in samples for d in dets}, reverse=True)
    if thresholds is None:
        thresholds = all_scores
    rows = []
    for tau in thresholds:
        tp = fp = fn = 0
        for dets, gts in samples:
            kept = [d for d in dets if d.score >= tau]
            rep = match_and_score(kept, gts, iou_threshold)
            tp += rep.tp
            fp += rep.fp
            fn += rep.fn
        precision = tp / (tp + fp) if (tp + fp) else 0.0
        recall = tp / (tp + fn) if (tp + fn) else 0.0
        rows.append((float(tau), precision, recall))
    # Integrate precision over recall; anchor the curve at recall 0 with the
    # first point's precision so a perfect single-threshold detector scores 1.
    pts = sorted(((r, p) for _, p, r in rows))
    auc = 0.0
    if pts:
        prev_r, prev_p = 0.0, pts[0][1]
        for r, p in pts:
            auc += (r - prev_r) * (p + prev_p) / 2.0
            prev_r, prev_p = r, p
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write("threshold,precision,recall\n")
            for tau, p, r in rows:
                fh.write(f"{tau},{p},{r}\n")
            fh.write(f"# auc,{auc}\n")
    return rows, auc
