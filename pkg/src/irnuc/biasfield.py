"""Bivariate polynomial bias-field model.

A field of degree D is B(x, y) = sum over t=0..D, s=0..D-t of a[t,s] x^t y^s.
Coefficients are stored t-outer/s-inner: index(t, s) = t*(D+1) - t*(t-1)/2 + s.
x follows the column index, y the row index.

Two pixel-to-model coordinate conventions are supported:

* ``unit-centered`` (canonical): column i in [0, W-1] maps affinely onto
  x in [-1, 1] (x = 0 when W == 1), likewise rows to y. Keeps the normal
  equations well conditioned at any image size.
* ``pixel-raw``: x = i, y = j. Retained for comparison; numerically
  treacherous for degree >= 3 at realistic sizes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import ParameterError
from .image import GrayImage

__all__ = [
    "AmplitudeSpec",
    "CoeffVector",
    "CoordNorm",
    "coeff_count",
    "eval_bias_field",
    "eval_field_array",
    "monomial_basis",
    "sample_coeffs",
    "term_orders",
]

COORD_MODES = ("unit-centered", "pixel-raw")


def coeff_count(degree: int) -> int:
    """Number of coefficients of a degree-D field: (D+1)(D+2)/2."""
    if degree < 1:
        raise ParameterError(f"degree must be >= 1, got {degree}")
    return (degree + 1) * (degree + 2) // 2


def term_orders(degree: int) -> list[tuple[int, int]]:
    """(t, s) exponent pairs in canonical order (t outer, s inner)."""
    return [(t, s) for t in range(degree + 1) for s in range(degree + 1 - t)]


@dataclass(frozen=True)
class CoeffVector:
    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        n = coeff_count(self.degree)
        arr = np.asarray(self.coeffs, dtype=np.float64)
        if arr.shape != (n,):
            raise ParameterError(
                f"degree {self.degree} needs exactly {n} coefficients, got shape {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ParameterError("coefficients must be finite")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    @staticmethod
    def index_of(t: int, s: int, degree: int) -> int:
        """Position of the x^t y^s coefficient: t*(D+1) - t*(t-1)//2 + s."""
        if t < 0 or s < 0 or t + s > degree:
            raise ParameterError(f"(t={t}, s={s}) not valid for degree {degree}")
        return t * (degree + 1) - t * (t - 1) // 2 + s

    def coeff(self, t: int, s: int) -> float:
        return float(self.coeffs[self.index_of(t, s, self.degree)])

    def with_coeff(self, t: int, s: int, value: float) -> "CoeffVector":
        arr = self.coeffs.copy()
        arr[self.index_of(t, s, self.degree)] = value
        return CoeffVector(self.degree, arr)

    def as_matrix(self) -> np.ndarray:
        """(D+1, D+1) matrix A with A[s, t] = a[t, s] (zero where t+s > D)."""
        a = np.zeros((self.degree + 1, self.degree + 1))
        for idx, (t, s) in enumerate(term_orders(self.degree)):
            a[s, t] = self.coeffs[idx]
        return a


@dataclass(frozen=True)
class CoordNorm:
    mode: str = "unit-centered"

    def __post_init__(self):
        if self.mode not in COORD_MODES:
            raise ParameterError(f"coord mode must be one of {COORD_MODES}, got {self.mode!r}")

    def x_coords(self, width: int) -> np.ndarray:
        return self._axis(width)

    def y_coords(self, height: int) -> np.ndarray:
        return self._axis(height)

    def _axis(self, n: int) -> np.ndarray:
        if n < 1:
            raise ParameterError(f"axis length must be >= 1, got {n}")
        if self.mode == "pixel-raw":
            return np.arange(n, dtype=np.float64)
        if n == 1:
            return np.zeros(1)
        return np.linspace(-1.0, 1.0, n)


def monomial_basis(x: float, y: float, degree: int) -> np.ndarray:
    """Vector m with m[index(t, s)] = x^t y^s; B(x, y) = m . a."""
    n = coeff_count(degree)
    out = np.empty(n)
    for idx, (t, s) in enumerate(term_orders(degree)):
        out[idx] = x**t * y**s
    return out


def _vandermonde(v: np.ndarray, degree: int) -> np.ndarray:
    return np.column_stack([v**p for p in range(degree + 1)])


def eval_field_array(
    coeffs: CoeffVector, width: int, height: int, coord: CoordNorm = CoordNorm()
) -> np.ndarray:
    """Evaluate the field on the full grid; separable, returns (H, W) float64."""
    xs = coord.x_coords(width)
    ys = coord.y_coords(height)
    vx = _vandermonde(xs, coeffs.degree)
    vy = _vandermonde(ys, coeffs.degree)
    return vy @ coeffs.as_matrix() @ vx.T


def eval_bias_field(
    coeffs: CoeffVector, width: int, height: int, coord: CoordNorm = CoordNorm()
) -> GrayImage:
    return GrayImage(eval_field_array(coeffs, width, height, coord))


@dataclass(frozen=True)
class AmplitudeSpec:
    """Per-total-order uniform bounds for random coefficients.

    bound(0) = ``constant``; bound(o) = ``scale``/o for o >= 1, unless an
    explicit override is present in ``overrides``. A bound of zero pins the
    coefficients of that order to zero; negative bounds are rejected.
    """

    constant: float = 0.08
    scale: float = 0.04
    overrides: Mapping[int, float] | None = None

    def bound(self, order: int) -> float:
        if self.overrides and order in self.overrides:
            b = float(self.overrides[order])
        elif order == 0:
            b = float(self.constant)
        else:
            b = float(self.scale) / order
        if b < 0:
            raise ParameterError(f"amplitude bound for order {order} is negative: {b}")
        return b

    def bounds(self, degree: int) -> np.ndarray:
        return np.array([self.bound(t + s) for (t, s) in term_orders(degree)])


def sample_coeffs(
    seed, degree: int, spec: AmplitudeSpec | None = None
) -> CoeffVector:
    """Draw coefficients uniformly from [-bound(t+s), +bound(t+s)].

    ``seed`` may be an int or a numpy SeedSequence; the stream is fixed by it.
    """
    spec = spec or AmplitudeSpec()
    bounds = spec.bounds(degree)
    rng = np.random.default_rng(seed)
    draw = rng.uniform(-1.0, 1.0, bounds.size) * bounds
    return CoeffVector(degree, draw)


def grid_mean_of_field(coeffs: CoeffVector, width: int, height: int, coord: CoordNorm) -> float:
    """Mean of the evaluated field over the grid, computed separably."""
    xs = coord.x_coords(width)
    ys = coord.y_coords(height)
    mu_x = np.array([np.mean(xs**p) for p in range(coeffs.degree + 1)])
    mu_y = np.array([np.mean(ys**p) for p in range(coeffs.degree + 1)])
    total = 0.0
    for idx, (t, s) in enumerate(term_orders(coeffs.degree)):
        total += coeffs.coeffs[idx] * mu_x[t] * mu_y[s]
    return float(total)


def zero_mean_coeffs(
    coeffs: CoeffVector, width: int, height: int, coord: CoordNorm = CoordNorm()
) -> CoeffVector:
    """Shift the constant term so the field has zero mean over the grid."""
    shift = grid_mean_of_field(coeffs, width, height, coord)
    arr = coeffs.coeffs.copy()
    arr[0] -= shift
    return CoeffVector(coeffs.degree, arr)


# ---------------------------------------------------------------------------
# JSON sidecar: {"degree": int, "coord": mode, "coeffs": [...], "k": real}
# plus optional extra fields (e.g. storage scale/offset) preserved verbatim.
# ---------------------------------------------------------------------------


def sidecar_dict(coeffs: CoeffVector, coord: CoordNorm, k: float, **extra) -> dict:
    out = {
        "degree": coeffs.degree,
        "coord": coord.mode,
        "coeffs": [float(c) for c in coeffs.coeffs],
        "k": float(k),
    }
    out.update(extra)
    return out


def write_sidecar(path: str, coeffs: CoeffVector, coord: CoordNorm, k: float, **extra) -> None:
    with open(path, "w") as fh:
        json.dump(sidecar_dict(coeffs, coord, k, **extra), fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_sidecar(path: str) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    data["coeffs"] = CoeffVector(int(data["degree"]), np.asarray(data["coeffs"], dtype=np.float64))
    data["coord"] = CoordNorm(data.get("coord", "unit-centered"))
    return data
