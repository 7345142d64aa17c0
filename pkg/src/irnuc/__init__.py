"""Polynomial bias-field synthesis, estimation and correction for infrared
small-target detection experiments."""

from .biasfield import (
    AmplitudeSpec,
    CoeffVector,
    CoordNorm,
    coeff_count,
    eval_bias_field,
    monomial_basis,
    sample_coeffs,
)
from .detection import DetectParams, Detection, PrReport, detect, iou, match_and_score
from .estimation import BlindFitParams, FitResult, correct, fit_blind, fit_paired
from .image import GrayImage, downsample2, gaussian_blur, load_image, save_image
from .losses import (
    BinaryMask,
    FeatureStack,
    br_loss,
    cos_sim,
    cos_sim_matrix,
    lambda_schedule,
    make_mask,
    resize_mask,
    tebs_loss,
    union_loss,
)
from .metrics import ScrSpec, coeff_loss, psnr, scr, scrg, ssim
from .pipeline import PipelineConfig, emit_pr_curve, run_pipeline
from .synthesis import (
    BBox,
    SceneRecord,
    SynthConfig,
    generate_corpus,
    inject_target,
    make_background,
    synthesize_degraded,
)

__version__ = "0.1.0"
