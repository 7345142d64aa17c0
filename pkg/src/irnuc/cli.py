"""Command-line interface.

Subcommands: synth, correct, detect, score, eval, loss, pipeline.
Exit codes: 0 success, 2 parameter error, 3 I/O error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from .biasfield import CoeffVector, CoordNorm, read_sidecar, sidecar_dict
from .detection import DetectParams, Detection, detect, match_and_score
from .errors import ImageIOError, NumericalError, ParameterError
from .estimation import BlindFitParams, correct, fit_blind, fit_paired
from .image import GrayImage, load_image, save_image
from .losses import BinaryMask, FeatureStack, br_loss, cos_sim, tebs_loss
from .pipeline import PipelineConfig, run_pipeline
from .synthesis import BBox, SynthConfig, generate_corpus


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as exc:
        raise ParameterError(f"size must look like 640x512, got {text!r}") from exc


def _cmd_synth(args) -> int:
    width, height = _parse_size(args.size)
    cfg = SynthConfig(
        count=args.count,
        width=width,
        height=height,
        degree=args.degree,
        k=args.k,
        seed=args.seed,
        background=args.background,
        targets_per_image=args.targets,
        zero_mean_bias=args.zero_mean_bias,
    )
    generate_corpus(cfg, args.out, jobs=args.jobs)
    print(f"wrote {cfg.count} samples to {args.out}")
    return 0


def _cmd_correct(args) -> int:
    degraded = load_image(args.infile)
    coord = CoordNorm(args.coord)
    if args.paired:
        clear = load_image(args.paired)
        fit = fit_paired(degraded, clear, args.degree, coord)
    else:
        params = BlindFitParams(
            blur_sigma=args.blur_sigma,
            downsample_first=not args.no_downsample,
            robust_iters=args.robust_iters,
        )
        fit = fit_blind(degraded, args.degree, coord, params)
    restored = correct(degraded, fit)
    save_image(restored, args.out, bit_depth=args.bit_depth)
    if args.emit_coeffs:
        payload = sidecar_dict(
            fit.coeffs,
            fit.coord,
            k=1.0,
            residual_rms=fit.residual_rms,
            method=fit.method,
            condition_estimate=fit.condition_estimate,
            removed_constant=fit.removed_constant,
        )
        with open(args.emit_coeffs, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
            fh.write("\n")
    print(f"{fit.method} fit: residual_rms={fit.residual_rms:.6g} -> {args.out}")
    return 0


def _cmd_detect(args) -> int:
    img = load_image(args.infile)
    params = DetectParams(
        tophat_radius=args.tophat_radius,
        threshold_k=args.threshold_k,
        min_area=args.min_area,
        max_area=args.max_area,
    )
    dets = detect(img, params)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "w", "h", "score"])
        for d in dets:
            writer.writerow([d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h, f"{d.score:.9f}"])
    print(f"{len(dets)} detections -> {args.out}")
    return 0


def _read_dets_csv(path: str) -> list[Detection]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                Detection(
                    BBox(int(row["x"]), int(row["y"]), int(row["w"]), int(row["h"])),
                    float(row.get("score", 1.0)),
                )
            )
    return out


def _read_gt_csv(path: str) -> list[BBox]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(BBox(int(row["x"]), int(row["y"]), int(row["w"]), int(row["h"])))
    return out


def _cmd_score(args) -> int:
    dets = _read_dets_csv(args.dets)
    gts = _read_gt_csv(args.gt)
    report = match_and_score(dets, gts, args.iou)
    payload = {
        "tp": report.tp,
        "fp": report.fp,
        "fn": report.fn,
        "precision": report.precision,
        "recall": report.recall,
        "iou_threshold": report.iou_threshold,
    }
    with open(args.report, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(f"P={report.precision:.4f} R={report.recall:.4f} -> {args.report}")
    return 0


def _cmd_eval(args) -> int:
    cfg = PipelineConfig(
        strategy=args.strategy,
        corpus=args.corpus,
        report=args.report,
        degree=args.degree,
        iou_threshold=args.iou,
        jobs=args.jobs,
    )
    report = run_pipeline(cfg)
    agg = report["aggregate"]
    print(f"images={agg['images']} P={agg['precision']:.4f} R={agg['recall']:.4f} -> {args.report}")
    return 0


def _load_map(path: str) -> np.ndarray:
    """16-bit PNG or whitespace-separated text matrix."""
    if path.endswith((".png", ".pgm")):
        return load_image(path).pixels
    try:
        return np.loadtxt(path, ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise ParameterError(f"{path}: cannot parse as text matrix: {exc}") from exc


def _load_stack(spec: str) -> FeatureStack:
    paths = spec.split(",")
    if len(paths) == 1:
        maps = [_load_map(paths[0])] * 4
    elif len(paths) == 4:
        maps = [_load_map(p) for p in paths]
    else:
        raise ParameterError("feature stacks need 1 or 4 comma-separated files")
    return FeatureStack(tuple(maps))


def _cmd_loss(args) -> int:
    if args.op == "cossim":
        if not args.b:
            raise ParameterError("cossim needs --a and --b")
        value = cos_sim(_load_map(args.a), _load_map(args.b))
    elif args.op == "br":
        if not args.b:
            raise ParameterError("br needs --a (clear stack) and --b (corrected stack)")
        value = br_loss(_load_stack(args.a), _load_stack(args.b))
    else:  # tebs
        if not args.mask:
            raise ParameterError("tebs needs --mask")
        mask_arr = _load_map(args.mask)
        mask = BinaryMask((mask_arr > 0.5).astype(np.uint8))
        value = tebs_loss(mask, _load_stack(args.a))
    print(f"{value:.12g}")
    return 0


def _cmd_pipeline(args) -> int:
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
        if args.report:
            data["report"] = args.report
        cfg = PipelineConfig.from_dict(data)
    else:
        if not (args.strategy and args.corpus and args.report):
            raise ParameterError("pipeline needs --config or --strategy/--corpus/--report")
        cfg = PipelineConfig(
            strategy=args.strategy,
            corpus=args.corpus,
            report=args.report,
            degree=args.degree,
            iou_threshold=args.iou,
            jobs=args.jobs,
        )
    report = run_pipeline(cfg)
    agg = report["aggregate"]
    parts = [f"images={agg['images']}", f"P={agg['precision']:.4f}", f"R={agg['recall']:.4f}"]
    if agg["psnr_mean"] is not None:
        parts.append(f"PSNR={agg['psnr_mean']}")
    print(" ".join(parts))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irnuc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--count", type=int, default=10, help="number of samples (default 10)")
    p.add_argument("--size", default="640x512", help="image size WxH (default 640x512)")
    p.add_argument("--degree", type=int, default=3, help="field degree (default 3)")
    p.add_argument("--k", type=float, default=10.0, help="severity factor (default 10)")
    p.add_argument("--seed", type=int, default=0, help="corpus seed (default 0)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument(
        "--background",
        default="cloud-noise",
        choices=("flat", "gradient", "cloud-noise", "structured"),
        help="background kind (default cloud-noise)",
    )
    p.add_argument("--targets", type=int, default=1, help="targets per image (default 1)")
    p.add_argument(
        "--zero-mean-bias",
        action="store_true",
        help="re-center sampled fields to zero grid mean (default off)",
    )
    p.add_argument("--jobs", type=int, default=1, help="parallel workers (default 1)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("correct", help="estimate and remove the smooth field from one image")
    p.add_argument("--in", dest="infile", required=True, help="degraded input image")
    p.add_argument("--out", required=True, help="corrected output image")
    p.add_argument("--paired", default=None, help="clear image for the oracle fit (default: blind)")
    p.add_argument("--degree", type=int, default=3, help="field degree (default 3)")
    p.add_argument("--coord", default="unit-centered", choices=("unit-centered", "pixel-raw"),
                   help="coordinate convention (default unit-centered)")
    p.add_argument("--blur-sigma", type=float, default=25.0,
                   help="blind smoothing sigma in full-resolution pixels (default 25)")
    p.add_argument("--robust-iters", type=int, default=3,
                   help="robust reweighting rounds for blind fits (default 3)")
    p.add_argument("--no-downsample", action="store_true",
                   help="skip the 2x downsample before the blind fit (default off)")
    p.add_argument("--bit-depth", type=int, default=16, choices=(8, 16),
                   help="output bit depth (default 16)")
    p.add_argument("--emit-coeffs", default=None, help="write fitted coefficients as JSON")
    p.set_defaults(func=_cmd_correct)

    p = sub.add_parser("detect", help="run the small-target detector on one image")
    p.add_argument("--in", dest="infile", required=True, help="input image")
    p.add_argument("--out", required=True, help="detections CSV (x,y,w,h,score)")
    p.add_argument("--tophat-radius", type=int, default=7, help="disk radius (default 7)")
    p.add_argument("--threshold-k", type=float, default=5.0, help="MAD multiplier (default 5.0)")
    p.add_argument("--min-area", type=int, default=2, help="component area floor (default 2)")
    p.add_argument("--max-area", type=int, default=2000, help="component area cap (default 2000)")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("score", help="match detections against ground truth")
    p.add_argument("--dets", required=True, help="detections CSV")
    p.add_argument("--gt", required=True, help="ground-truth CSV (annotations.csv format)")
    p.add_argument("--iou", type=float, default=0.5, help="IoU threshold (default 0.5)")
    p.add_argument("--report", required=True, help="output JSON")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("eval", help="evaluate a corpus under one strategy")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--strategy", default="blind-correct",
                   choices=("direct", "blind-correct", "paired-correct"),
                   help="processing strategy (default blind-correct)")
    p.add_argument("--report", required=True, help="output JSON report")
    p.add_argument("--degree", type=int, default=3, help="blind fit degree (default 3)")
    p.add_argument("--iou", type=float, default=0.5, help="matching IoU (default 0.5)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers (default 1)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("loss", help="evaluate a supervision loss on files")
    p.add_argument("--op", required=True, choices=("tebs", "br", "cossim"), help="which loss")
    p.add_argument("--a", required=True,
                   help="map or comma-separated 4-stage stack (PNG or text matrix)")
    p.add_argument("--b", default=None, help="second map/stack (br, cossim)")
    p.add_argument("--mask", default=None, help="binary mask file (tebs)")
    p.set_defaults(func=_cmd_loss)

    p = sub.add_parser("pipeline", help="run a full evaluation from a config file or flags")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--strategy", default=None,
                   choices=("direct", "blind-correct", "paired-correct"), help="strategy")
    p.add_argument("--corpus", default=None, help="corpus directory")
    p.add_argument("--report", default=None, help="output JSON report")
    p.add_argument("--degree", type=int, default=3, help="blind fit degree (default 3)")
    p.add_argument("--iou", type=float, default=0.5, help="matching IoU (default 0.5)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers (default 1)")
    p.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return 2
    except (ImageIOError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
