"""Recurrence-plot encoding of a univariate series as a grayscale image."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_EPS = 0.1
DEFAULT_STEPS = 5
DEFAULT_SIZE = 128


@dataclass
class RecurrenceMatrix:
    """Quantized pairwise-distance matrix of a normalized series.

    ``cells[i, j]`` counts how many distance steps of width ``eps / steps``
    are needed to cover ``min(|x_i - x_j|, eps)``; zero exactly when the two
    points coincide.
    """

    cells: np.ndarray
    eps: float
    steps: int

    @property
    def n(self) -> int:
        return int(self.cells.shape[0])


@dataclass
class GrayImage:
    """A square 8-bit grayscale image, row-major."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.dtype != np.uint8:
            raise ValueError("GrayImage pixels must be uint8")
        if self.pixels.ndim != 2 or self.pixels.shape[0] != self.pixels.shape[1]:
            raise ValueError("GrayImage must be square")

    @property
    def size(self) -> int:
        return int(self.pixels.shape[0])

    def to_float(self) -> np.ndarray:
        """Intensities on [0, 1] as float64."""
        return self.pixels.astype(np.float64) / 255.0


def normalize(values: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0, 1]; a constant series maps to all zeros."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("normalize needs a 1-d series of at least 2 points")
    if not np.all(np.isfinite(x)):
        raise ValueError("normalize requires finite values")
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def recurrence_matrix(
    x: np.ndarray, eps: float = DEFAULT_EPS, steps: int = DEFAULT_STEPS
) -> RecurrenceMatrix:
    """Quantized recurrence matrix with distances clipped at ``eps``.

    The embedding is the raw scalar sequence (dimension 1, delay 1), so the
    underlying distance is ``|x_i - x_j|``. Distances are clipped at ``eps``
    and quantized upward onto ``steps`` levels; only exact coincidences map
    to cell 0.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("recurrence_matrix needs a 1-d series of at least 2 points")
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError("input must be normalized to [0, 1]")
    d = np.abs(x[:, None] - x[None, :])
    r = np.minimum(d, eps)
    # r/eps is exactly 1.0 at the clip, so the top cell lands on `steps`.
    cells = np.ceil((r / eps) * steps)
    cells[r == 0.0] = 0.0
    np.minimum(cells, steps, out=cells)
    return RecurrenceMatrix(cells=cells.astype(np.int64), eps=eps, steps=steps)


def _resample_bilinear(a: np.ndarray, size: int) -> np.ndarray:
    # Half-pixel center alignment; reduces to the identity when sizes match.
    n = a.shape[0]
    src = (np.arange(size) + 0.5) * (n / size) - 0.5
    src = np.clip(src, 0.0, n - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n - 1)
    f = src - i0
    rows = a[i0] * (1.0 - f)[:, None] + a[i1] * f[:, None]
    return rows[:, i0] * (1.0 - f)[None, :] + rows[:, i1] * f[None, :]


def render(rm: RecurrenceMatrix, size: int = DEFAULT_SIZE) -> GrayImage:
    """Render a recurrence matrix as a ``size`` x ``size`` grayscale image.

    Cell values map linearly onto intensity (full clip -> 255) and the
    ``n`` x ``n`` field is bilinearly resampled to the target size.
    """
    if rm.n < 2:
        raise ValueError("render needs a matrix of size >= 2")
    if size < 2:
        raise ValueError("render size must be >= 2")
    intensity = rm.cells.astype(np.float64) * (255.0 / rm.steps)
    resampled = _resample_bilinear(intensity, size)
    pixels = np.rint(np.clip(resampled, 0.0, 255.0)).astype(np.uint8)
    return GrayImage(pixels=pixels)


def encode_series(
    values: np.ndarray,
    eps: float = DEFAULT_EPS,
    steps: int = DEFAULT_STEPS,
    size: int = DEFAULT_SIZE,
) -> GrayImage:
    """normalize -> recurrence_matrix -> render, in one call."""
    return render(recurrence_matrix(normalize(values), eps, steps), size)


def save_image(img: GrayImage, path) -> None:
    """Write a grayscale image as PGM (``.pgm``) or PNG (anything else)."""
    path = str(path)
    if path.lower().endswith(".pgm"):
        header = f"P5\n{img.size} {img.size}\n255\n".encode("ascii")
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(img.pixels.tobytes())
    else:
        from PIL import Image

        Image.fromarray(img.pixels, mode="L").save(path)
