"""Grayscale image container, resampling, separable Gaussian blur and file I/O.

Intensities are float64 in a nominal [0,1] range but are never clamped in
memory; clamping happens only when a file is written. Pixel (i, j) means
column i, row j; arrays are row-major with the origin at the top left.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve1d

from .errors import (
    ImageIOError,
    MultiChannelError,
    ParameterError,
    TruncatedFileError,
    UnsupportedFormatError,
)

__all__ = [
    "GrayImage",
    "downsample2",
    "gaussian_blur",
    "gaussian_kernel",
    "load_image",
    "save_image",
]


@dataclass(frozen=True)
class GrayImage:
    """Immutable single-channel image.

    ``pixels`` is an (height, width) float64 array, made read-only on
    construction so instances are safe to share across threads. ``warnings``
    records non-fatal processing notes (e.g. odd-dimension truncation).
    """

    pixels: np.ndarray
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ParameterError(f"image must be 2-D and non-empty, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ParameterError("image intensities must be finite")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


def downsample2(img: GrayImage) -> GrayImage:
    """Halve both dimensions by averaging disjoint 2x2 blocks.

    Odd trailing rows/columns are truncated before pooling; the truncation is
    recorded in the result's ``warnings`` instead of failing.
    """
    h, w = img.shape
    warnings = list(img.warnings)
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        # Nothing poolable along one axis; keep that axis at 1 by averaging
        # whatever is there.
        h2, w2 = max(h2, 1), max(w2, 1)
        warnings.append("downsample2: dimension < 2, degenerate pooling")
        ph, pw = min(2 * h2, h), min(2 * w2, w)
        block = img.pixels[:ph, :pw]
        out = block.reshape(h2, ph // h2, w2, pw // w2).mean(axis=(1, 3))
        return GrayImage(out, tuple(warnings))
    if h % 2 or w % 2:
        warnings.append("downsample2: odd dimension truncated")
    block = img.pixels[: 2 * h2, : 2 * w2]
    out = block.reshape(h2, 2, w2, 2).mean(axis=(1, 3))
    return GrayImage(out, tuple(warnings))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian kernel of radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _blur_array(arr: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel(sigma)
    tmp = convolve1d(arr, k, axis=1, mode="nearest")
    return convolve1d(tmp, k, axis=0, mode="nearest")


def blur_vector(vec: np.ndarray, sigma: float) -> np.ndarray:
    """1-D blur with the same kernel and edge replication as gaussian_blur."""
    return convolve1d(np.asarray(vec, dtype=np.float64), gaussian_kernel(sigma), mode="nearest")


def gaussian_blur(img: GrayImage, sigma: float) -> GrayImage:
    """Separable Gaussian blur with edge replication at the borders."""
    return GrayImage(_blur_array(img.pixels, sigma), img.warnings)


# ---------------------------------------------------------------------------
# File I/O: 8/16-bit grayscale PNG and binary PGM (P5).
# ---------------------------------------------------------------------------

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _load_pgm(path: str) -> GrayImage:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise UnsupportedFormatError(f"{path}: not a binary (P5) PGM")
    # Header: magic, width, height, maxval, separated by whitespace/comments.
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedFileError(f"{path}: truncated PGM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise UnsupportedFormatError(f"{path}: malformed PGM header") from exc
    if maxval == 255:
        dtype, itemsize = np.dtype(np.uint8), 1
    elif maxval == 65535:
        dtype, itemsize = np.dtype(">u2"), 2
    else:
        raise UnsupportedFormatError(f"{path}: PGM maxval {maxval} not supported")
    need = width * height * itemsize
    raw = data[pos : pos + need]
    if len(raw) < need:
        raise TruncatedFileError(f"{path}: PGM pixel data truncated")
    arr = np.frombuffer(raw, dtype=dtype).reshape(height, width)
    return GrayImage(arr.astype(np.float64) / float(maxval))


def _load_png(path: str) -> GrayImage:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode not in ("L", "I", "I;16", "I;16B"):
                raise MultiChannelError(f"{path}: mode {mode} is not single-channel 8/16-bit")
            try:
                arr = np.asarray(im)
            except OSError as exc:
                raise TruncatedFileError(f"{path}: {exc}") from exc
    except UnidentifiedImageError as exc:
        raise UnsupportedFormatError(f"{path}: {exc}") from exc
    except OSError as exc:
        if isinstance(exc, (MultiChannelError, TruncatedFileError)):
            raise
        raise TruncatedFileError(f"{path}: {exc}") from exc
    if arr.dtype == np.uint8:
        return GrayImage(arr.astype(np.float64) / 255.0)
    return GrayImage(arr.astype(np.float64) / 65535.0)


def load_image(path: str) -> GrayImage:
    """Load an 8/16-bit single-channel PNG or binary PGM as [0,1] floats."""
    if not os.path.exists(path):
        raise ImageIOError(f"{path}: no such file")
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head.startswith(b"P5"):
        return _load_pgm(path)
    if head == _PNG_MAGIC:
        return _load_png(path)
    raise UnsupportedFormatError(f"{path}: unrecognized format (expected PNG or P5 PGM)")


def _quantize(img: GrayImage, maxval: int) -> np.ndarray:
    clamped = np.clip(img.pixels, 0.0, 1.0)
    return np.rint(clamped * maxval).astype(np.uint16 if maxval > 255 else np.uint8)


def save_image(img: GrayImage, path: str, bit_depth: int = 16) -> None:
    """Write PNG or PGM (by extension), clamping to [0,1] and quantizing."""
    if bit_depth not in (8, 16):
        raise ParameterError(f"bit_depth must be 8 or 16, got {bit_depth}")
    maxval = 255 if bit_depth == 8 else 65535
    q = _quantize(img, maxval)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode()
        payload = q.astype(">u2").tobytes() if bit_depth == 16 else q.tobytes()
        with open(path, "wb") as fh:
            fh.write(header + payload)
        return
    if ext == ".png":
        from PIL import Image

        im = Image.fromarray(q)
        im.save(path, format="PNG")
        return
    raise UnsupportedFormatError(f"{path}: unsupported extension {ext!r} (use .png or .pgm)")
