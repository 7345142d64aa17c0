"""Frozen benchmark suite configurations used by the acceptance tests and the
experiment scripts.

Two families:

* ``efficacy_config``: cloud-noise scenes for scoring blind correction
  against the oracle by PSNR/SSIM. Bias fields are zero-mean over the grid
  because a mean-preserving blind estimator can only ever be scored on the
  zero-mean component of the field.

* ``ordering_config``: structured (building) scenes for the
  direct / blind-correct / paired-correct recall ordering. The fields are
  degree 4 with a boosted top order: the oracle reads the true degree from
  the sidecar while the blind estimator keeps its fixed default (degree 3),
  which is exactly the model-mismatch regime the ordering claim is about.
  Targets are placed on the strongest decile of the field gradient.
  Per-severity contrast bands and grain levels keep the targets straddling
  the detectability boundary at every k (detector and estimator parameters
  are identical across k).
"""

from __future__ import annotations

from .biasfield import AmplitudeSpec
from .errors import ParameterError
from .synthesis import SynthConfig

__all__ = ["efficacy_config", "ordering_config"]

# (grain, amplitude multiplier, contrast range) per severity for the
# ordering suite; see module docstring.
_ORDERING_TUNING = {
    3.0: (0.012, 2.2, (0.06, 0.15)),
    10.0: (0.020, 1.6, (0.10, 0.22)),
    12.0: (0.030, 1.6, (0.10, 0.23)),
}


def efficacy_config(k: float = 10.0, count: int = 100, seed: int = 101) -> SynthConfig:
    return SynthConfig(
        count=count,
        degree=3,
        k=k,
        seed=seed,
        background="cloud-noise",
        zero_mean_bias=True,
        targets_per_image=2,
        target_contrast_range=(0.15, 0.30),
        placement="uniform",
    )


def ordering_config(k: float = 10.0, count: int = 200, seed: int = 202) -> SynthConfig:
    key = float(k)
    if key not in _ORDERING_TUNING:
        raise ParameterError(
            f"ordering suite is calibrated for k in {sorted(_ORDERING_TUNING)}, got {k}"
        )
    grain, amp, contrast = _ORDERING_TUNING[key]
    return SynthConfig(
        count=count,
        degree=4,
        k=k,
        seed=seed,
        background="structured",
        background_params={"grain": grain},
        amplitude=AmplitudeSpec(
            constant=amp * 0.08, scale=amp * 0.04, overrides={4: amp * 0.035}
        ),
        zero_mean_bias=True,
        targets_per_image=3,
        target_radius_range=(4.0, 7.0),
        target_contrast_range=contrast,
        placement="high-gradient",
        placement_quantile=0.90,
        min_target_spacing=50.0,
    )
