"""Scale-space keypoint detection and gradient-histogram descriptors.

Works on square grayscale images with intensities treated on [0, 1].
The pyramid starts at native resolution (no initial upsampling); octave
count defaults to ``floor(log2(size)) - 2``.
"""

from __future__ import annotations

import csv
import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .rp import GrayImage

logger = logging.getLogger(__name__)

SIGMA0 = 1.6
INIT_SIGMA = 0.5  # blur assumed already present in the input
SCALES_PER_OCTAVE = 3
CONTRAST_THRESHOLD = 0.03  # on [0, 1] intensities, tested at the refined extremum
EDGE_RATIO = 10.0
DETECT_BORDER = 5  # octave pixels excluded from detection
MAX_REFINE_STEPS = 5
ORI_BINS = 36
ORI_SIGMA_FACTOR = 1.5  # orientation window sigma = 1.5 * scale
ORI_RADIUS_SIGMAS = 3.0  # window radius in orientation sigmas
ORI_PEAK_RATIO = 0.8
DESCR_CELLS = 4
DESCR_ORI_BINS = 8
DESCR_CELL_FACTOR = 3.0  # histogram cell width = 3 * scale
DESCR_CLIP = 0.2
KERNEL_TRUNCATE = 5.0  # gaussian kernel radius in sigmas

DESCRIPTOR_DIM = DESCR_CELLS * DESCR_CELLS * DESCR_ORI_BINS

_DESC_MAGIC = b"ICDS"
_DESC_VERSION = 1


class SiftError(ValueError):
    """Raised on invalid images or dump files."""


@dataclass
class Keypoint:
    """An oriented scale-space extremum in base-image coordinates.

    ``x``/``y``/``scale`` are in base-image units; ``orientation`` is in
    [0, 2*pi). ``octave``/``layer``/``response`` are bookkeeping from
    detection (layer is the refined difference-of-Gaussian index within the
    octave).
    """

    x: float
    y: float
    scale: float
    orientation: float = 0.0
    octave: int = 0
    layer: float = 0.0
    response: float = 0.0

    @property
    def scale_oct(self) -> float:
        """Scale expressed in the keypoint's own octave units."""
        return self.scale / float(2**self.octave)


@dataclass
class ScaleSpacePyramid:
    """Per-octave Gaussian stacks and their difference layers."""

    gaussians: list[list[np.ndarray]]
    dogs: list[list[np.ndarray]]
    scales_per_octave: int
    sigma0: float
    init_sigma: float
    _gradients: dict = field(default_factory=dict, repr=False)

    @property
    def n_octaves(self) -> int:
        return len(self.gaussians)

    def sigma_of(self, layer: float) -> float:
        """Nominal blur of a (possibly fractional) layer, octave units."""
        return self.sigma0 * 2.0 ** (layer / self.scales_per_octave)

    def gradient(self, octave: int, layer: int) -> tuple[np.ndarray, np.ndarray]:
        """Cached (magnitude, angle) central-difference gradients.

        Angles are in [0, 2*pi) with y pointing up (decreasing row index),
        zero on the one-pixel border.
        """
        key = (octave, layer)
        if key not in self._gradients:
            im = self.gaussians[octave][layer]
            dx = np.zeros_like(im)
            dy = np.zeros_like(im)
            dx[:, 1:-1] = 0.5 * (im[:, 2:] - im[:, :-2])
            dy[1:-1, :] = 0.5 * (im[:-2, :] - im[2:, :])
            mag = np.hypot(dx, dy)
            ang = np.mod(np.arctan2(dy, dx), 2.0 * math.pi)
            self._gradients[key] = (mag, ang)
        return self._gradients[key]


def _as_float_image(image) -> np.ndarray:
    if isinstance(image, GrayImage):
        return image.to_float()
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise SiftError("image must be 2-d")
    return arr


def _gaussian_blur(im: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0.0:
        return im.copy()
    out = ndimage.gaussian_filter1d(im, sigma, axis=0, mode="reflect", truncate=KERNEL_TRUNCATE)
    return ndimage.gaussian_filter1d(out, sigma, axis=1, mode="reflect", truncate=KERNEL_TRUNCATE)


def max_octaves_for(size: int) -> int:
    """Default octave count for a square image: floor(log2(size)) - 2."""
    if size < 2:
        return 1
    return max(1, int(math.floor(math.log2(size))) - 2)


def build_dog_pyramid(
    image,
    octaves: int | None = None,
    scales_per_octave: int = SCALES_PER_OCTAVE,
    sigma0: float = SIGMA0,
    init_sigma: float = INIT_SIGMA,
) -> ScaleSpacePyramid:
    """Build the Gaussian scale space and its difference layers.

    Per octave there are ``scales_per_octave + 3`` Gaussian images and
    ``scales_per_octave + 2`` difference layers; blur grows by ``2**(1/s)``
    per layer. Each next octave starts from the Gaussian image holding
    twice the base blur, downsampled by two. A too-small image reduces the
    octave count instead of failing.
    """
    im = _as_float_image(image)
    if scales_per_octave < 3:
        raise SiftError("scales_per_octave must be >= 3")
    if sigma0 <= init_sigma:
        raise SiftError("sigma0 must exceed the assumed initial blur")
    limit = max_octaves_for(min(im.shape))
    if octaves is None:
        octaves = limit
    elif octaves > limit:
        logger.debug("reducing octaves from %d to %d for image %s", octaves, limit, im.shape)
        octaves = limit
    octaves = max(1, octaves)

    s = scales_per_octave
    k = 2.0 ** (1.0 / s)
    sigmas = sigma0 * k ** np.arange(s + 3)
    # increments: blur needed to go from sigma_{i-1} to sigma_i
    increments = np.sqrt(np.maximum(sigmas[1:] ** 2 - sigmas[:-1] ** 2, 0.0))

    gaussians: list[list[np.ndarray]] = []
    dogs: list[list[np.ndarray]] = []
    base = _gaussian_blur(im, math.sqrt(max(sigma0**2 - init_sigma**2, 0.0)))
    for _ in range(octaves):
        stack = [base]
        for inc in increments:
            stack.append(_gaussian_blur(stack[-1], float(inc)))
        gaussians.append(stack)
        dogs.append([stack[i + 1] - stack[i] for i in range(s + 2)])
        # The image with blur 2*sigma0 sits at index s; subsample it.
        base = stack[s][::2, ::2]
        if min(base.shape) < 4:
            break
    return ScaleSpacePyramid(
        gaussians=gaussians,
        dogs=dogs,
        scales_per_octave=s,
        sigma0=sigma0,
        init_sigma=init_sigma,
    )


def _local_extrema(stack: np.ndarray, threshold: float) -> np.ndarray:
    """(layer, row, col) of 26-neighbor extrema in the interior of a stack."""
    center = stack[1:-1, 1:-1, 1:-1]
    is_max = np.abs(center) > threshold
    is_min = is_max.copy()
    for dl in (-1, 0, 1):
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if dl == di == dj == 0:
                    continue
                lslice = slice(1 + dl, stack.shape[0] - 1 + dl)
                islice = slice(1 + di, stack.shape[1] - 1 + di)
                jslice = slice(1 + dj, stack.shape[2] - 1 + dj)
                neighbor = stack[lslice, islice, jslice]
                is_max &= center >= neighbor
                is_min &= center <= neighbor
    hits = np.argwhere(is_max | is_min)
    hits += 1  # interior offset
    return hits


def _refine_candidate(
    dog: np.ndarray, l: int, i: int, j: int, s: int, border: int
) -> tuple[int, int, int, np.ndarray, np.ndarray, float] | None:
    """Quadratic sub-pixel refinement; None when the candidate escapes."""
    n_layers, h, w = dog.shape
    for _ in range(MAX_REFINE_STEPS):
        d = dog
        grad = 0.5 * np.array(
            [
                d[l, i, j + 1] - d[l, i, j - 1],
                d[l, i + 1, j] - d[l, i - 1, j],
                d[l + 1, i, j] - d[l - 1, i, j],
            ]
        )
        dxx = d[l, i, j + 1] - 2.0 * d[l, i, j] + d[l, i, j - 1]
        dyy = d[l, i + 1, j] - 2.0 * d[l, i, j] + d[l, i - 1, j]
        dss = d[l + 1, i, j] - 2.0 * d[l, i, j] + d[l - 1, i, j]
        dxy = 0.25 * (
            d[l, i + 1, j + 1] - d[l, i + 1, j - 1] - d[l, i - 1, j + 1] + d[l, i - 1, j - 1]
        )
        dxs = 0.25 * (
            d[l + 1, i, j + 1] - d[l + 1, i, j - 1] - d[l - 1, i, j + 1] + d[l - 1, i, j - 1]
        )
        dys = 0.25 * (
            d[l + 1, i + 1, j] - d[l + 1, i - 1, j] - d[l - 1, i + 1, j] + d[l - 1, i - 1, j]
        )
        hess = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
        try:
            offset = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(offset) <= 0.5):
            return l, i, j, offset, grad, float(d[l, i, j])
        j += int(round(offset[0]))
        i += int(round(offset[1]))
        l += int(round(offset[2]))
        if not (1 <= l <= s and border <= i < h - border and border <= j < w - border):
            return None
    return None


def detect_keypoints(
    pyramid: ScaleSpacePyramid,
    contrast_threshold: float = CONTRAST_THRESHOLD,
    edge_ratio: float = EDGE_RATIO,
) -> list[Keypoint]:
    """Find refined scale-space extrema, unoriented.

    Candidates are 26-neighbor extrema of the difference layers, refined by
    a quadratic fit (up to 5 re-centerings), rejected when the refined
    |response| falls under ``contrast_threshold`` or the curvature ratio
    exceeds ``edge_ratio``. Coordinates come back in base-image units.
    """
    s = pyramid.scales_per_octave
    prefilter = 0.5 * contrast_threshold
    edge_limit = (edge_ratio + 1.0) ** 2 / edge_ratio
    out: list[Keypoint] = []
    seen: set = set()
    for o, dog_list in enumerate(pyramid.dogs):
        dog = np.stack(dog_list)
        if min(dog.shape[1:]) < 2 * DETECT_BORDER + 3:
            continue
        for l, i, j in _local_extrema(dog, prefilter):
            if not (1 <= l <= s):
                continue
            if not (
                DETECT_BORDER <= i < dog.shape[1] - DETECT_BORDER
                and DETECT_BORDER <= j < dog.shape[2] - DETECT_BORDER
            ):
                continue
            refined = _refine_candidate(dog, int(l), int(i), int(j), s, DETECT_BORDER)
            if refined is None:
                continue
            l2, i2, j2, offset, grad, d_val = refined
            response = d_val + 0.5 * float(np.dot(grad, offset))
            if abs(response) < contrast_threshold:
                continue
            d = dog
            dxx = d[l2, i2, j2 + 1] - 2.0 * d[l2, i2, j2] + d[l2, i2, j2 - 1]
            dyy = d[l2, i2 + 1, j2] - 2.0 * d[l2, i2, j2] + d[l2, i2 - 1, j2]
            dxy = 0.25 * (
                d[l2, i2 + 1, j2 + 1]
                - d[l2, i2 + 1, j2 - 1]
                - d[l2, i2 - 1, j2 + 1]
                + d[l2, i2 - 1, j2 - 1]
            )
            trace = dxx + dyy
            det = dxx * dyy - dxy * dxy
            if det <= 0.0 or trace * trace * edge_ratio >= det * (edge_ratio + 1.0) ** 2:
                continue
            layer = l2 + float(offset[2])
            x_oct = j2 + float(offset[0])
            y_oct = i2 + float(offset[1])
            key = (o, round(x_oct, 6), round(y_oct, 6), round(layer, 6))
            if key in seen:
                continue
            seen.add(key)
            factor = float(2**o)
            out.append(
                Keypoint(
                    x=x_oct * factor,
                    y=y_oct * factor,
                    scale=pyramid.sigma_of(layer) * factor,
                    octave=o,
                    layer=layer,
                    response=response,
                )
            )
    out.sort(key=lambda kp: (kp.y, kp.x, kp.scale, kp.layer))
    return out


def _gaussian_layer_index(pyramid: ScaleSpacePyramid, kp: Keypoint) -> int:
    s = pyramid.scales_per_octave
    return int(min(max(round(kp.layer), 0), s + 2))


def assign_orientations(
    keypoints: list[Keypoint], pyramid: ScaleSpacePyramid
) -> list[Keypoint]:
    """Assign dominant gradient orientations; strong secondary peaks fork.

    A 36-bin magnitude-weighted histogram is collected in a Gaussian window
    of sigma ``1.5 * scale`` (radius three sigmas), smoothed circularly;
    every local peak at >= 80% of the maximum spawns one keypoint with a
    parabola-interpolated orientation. Keypoints whose window center falls
    outside the valid gradient region, or with an empty histogram, are
    discarded.
    """
    out: list[Keypoint] = []
    two_pi = 2.0 * math.pi
    smooth = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    for kp in keypoints:
        o = kp.octave
        layer = _gaussian_layer_index(pyramid, kp)
        mag, ang = pyramid.gradient(o, layer)
        h, w = mag.shape
        factor = float(2**o)
        xc, yc = kp.x / factor, kp.y / factor
        xi, yi = int(round(xc)), int(round(yc))
        if not (1 <= xi <= w - 2 and 1 <= yi <= h - 2):
            continue
        sigma_w = ORI_SIGMA_FACTOR * kp.scale_oct
        radius = max(1, int(round(ORI_RADIUS_SIGMAS * sigma_w)))
        r0, r1 = max(1, yi - radius), min(h - 2, yi + radius)
        c0, c1 = max(1, xi - radius), min(w - 2, xi + radius)
        rows = np.arange(r0, r1 + 1)
        cols = np.arange(c0, c1 + 1)
        di = (rows - yi)[:, None]
        dj = (cols - xi)[None, :]
        weight = np.exp(-(di * di + dj * dj) / (2.0 * sigma_w * sigma_w))
        widx = (ang[r0 : r1 + 1, c0 : c1 + 1] * (ORI_BINS / two_pi)).astype(np.int64) % ORI_BINS
        hist = np.bincount(
            widx.ravel(),
            weights=(weight * mag[r0 : r1 + 1, c0 : c1 + 1]).ravel(),
            minlength=ORI_BINS,
        )
        # circular smoothing
        hist = sum(
            smooth[t] * np.roll(hist, t - 2) for t in range(5)
        )
        peak = float(hist.max())
        if peak <= 0.0:
            continue
        left = np.roll(hist, 1)
        right = np.roll(hist, -1)
        for b in np.flatnonzero((hist > left) & (hist > right) & (hist >= ORI_PEAK_RATIO * peak)):
            denom = left[b] - 2.0 * hist[b] + right[b]
            shift = 0.0 if denom == 0.0 else 0.5 * (left[b] - right[b]) / denom
            theta = ((b + 0.5 + shift) % ORI_BINS) * (two_pi / ORI_BINS)
            out.append(
                Keypoint(
                    x=kp.x,
                    y=kp.y,
                    scale=kp.scale,
                    orientation=float(theta % two_pi),
                    octave=kp.octave,
                    layer=kp.layer,
                    response=kp.response,
                )
            )
    out.sort(key=lambda k: (k.y, k.x, k.scale, k.orientation))
    return out


def compute_descriptor(kp: Keypoint, pyramid: ScaleSpacePyramid) -> np.ndarray:
    """128-d gradient histogram at a keypoint (4x4 cells x 8 orientations).

    Window gradients are rotated into the keypoint frame and trilinearly
    binned; the vector is unit-normalized, clipped at 0.2, renormalized.
    A flat window yields the all-zero vector (flagged in the log).
    """
    o = kp.octave
    layer = _gaussian_layer_index(pyramid, kp)
    mag, ang = pyramid.gradient(o, layer)
    h, w = mag.shape
    factor = float(2**o)
    xc, yc = kp.x / factor, kp.y / factor
    if not (1 <= round(xc) <= w - 2 and 1 <= round(yc) <= h - 2):
        logger.debug("descriptor window center outside image; zero vector")
        return np.zeros(DESCRIPTOR_DIM)
    d = DESCR_CELLS
    cell_w = DESCR_CELL_FACTOR * kp.scale_oct
    half = int(round(cell_w * math.sqrt(2.0) * (d + 1) * 0.5))
    half = min(half, int(math.hypot(h, w)))
    r0, r1 = max(1, int(round(yc)) - half), min(h - 2, int(round(yc)) + half)
    c0, c1 = max(1, int(round(xc)) - half), min(w - 2, int(round(xc)) + half)
    if r1 < r0 or c1 < c0:
        return np.zeros(DESCRIPTOR_DIM)
    rows = np.arange(r0, r1 + 1)
    cols = np.arange(c0, c1 + 1)
    dxp = (cols - xc)[None, :]
    dyp = (yc - rows)[:, None]  # y up
    cos_t, sin_t = math.cos(kp.orientation), math.sin(kp.orientation)
    rx = (cos_t * dxp + sin_t * dyp) / cell_w
    ry = (-sin_t * dxp + cos_t * dyp) / cell_w
    cbin = rx + (d - 1) / 2.0
    rbin = ry + (d - 1) / 2.0
    mwin = mag[r0 : r1 + 1, c0 : c1 + 1]
    awin = ang[r0 : r1 + 1, c0 : c1 + 1]
    mask = (cbin > -1.0) & (cbin < d) & (rbin > -1.0) & (rbin < d) & (mwin > 0.0)
    if not np.any(mask):
        logger.debug("flat descriptor window; zero vector")
        return np.zeros(DESCRIPTOR_DIM)
    sigma_d = 0.5 * d
    gauss = np.exp(-(rx * rx + ry * ry) / (2.0 * sigma_d * sigma_d))
    wgt = (gauss * mwin)[mask]
    obin = ((awin[mask] - kp.orientation) % (2.0 * math.pi)) * (
        DESCR_ORI_BINS / (2.0 * math.pi)
    )
    rb = rbin[mask]
    cb = cbin[mask]
    r_f = np.floor(rb)
    c_f = np.floor(cb)
    o_f = np.floor(obin)
    dr = rb - r_f
    dc = cb - c_f
    do = obin - o_f
    side = d + 2
    flat = np.zeros(side * side * DESCR_ORI_BINS)
    for corner_r in (0, 1):
        wr = wgt * (dr if corner_r else 1.0 - dr)
        ri = (r_f + corner_r + 1).astype(np.int64)
        for corner_c in (0, 1):
            wc = wr * (dc if corner_c else 1.0 - dc)
            ci = (c_f + corner_c + 1).astype(np.int64)
            for corner_o in (0, 1):
                wo = wc * (do if corner_o else 1.0 - do)
                oi = (o_f.astype(np.int64) + corner_o) % DESCR_ORI_BINS
                idx = (ri * side + ci) * DESCR_ORI_BINS + oi
                flat += np.bincount(idx, weights=wo, minlength=flat.size)
    hist = flat.reshape(side, side, DESCR_ORI_BINS)[1 : d + 1, 1 : d + 1, :]
    vec = hist.reshape(-1)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        logger.debug("flat descriptor window; zero vector")
        return np.zeros(DESCRIPTOR_DIM)
    vec = vec / norm
    np.minimum(vec, DESCR_CLIP, out=vec)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        return np.zeros(DESCRIPTOR_DIM)
    return vec / norm


def compute_descriptors(
    keypoints: list[Keypoint], pyramid: ScaleSpacePyramid
) -> np.ndarray:
    """Stack of descriptors aligned with ``keypoints`` (``(n, 128)``)."""
    if not keypoints:
        return np.zeros((0, DESCRIPTOR_DIM))
    return np.vstack([compute_descriptor(kp, pyramid) for kp in keypoints])


def extract(
    image,
    octaves: int | None = None,
    scales_per_octave: int = SCALES_PER_OCTAVE,
    sigma0: float = SIGMA0,
    init_sigma: float = INIT_SIGMA,
    contrast_threshold: float = CONTRAST_THRESHOLD,
    edge_ratio: float = EDGE_RATIO,
) -> tuple[list[Keypoint], np.ndarray]:
    """Full pipeline: pyramid, detection, orientation, descriptors.

    An image with no surviving keypoints returns an empty list and an
    empty ``(0, 128)`` matrix; callers map that to an all-zero feature.
    """
    pyramid = build_dog_pyramid(image, octaves, scales_per_octave, sigma0, init_sigma)
    kps = detect_keypoints(pyramid, contrast_threshold, edge_ratio)
    oriented = assign_orientations(kps, pyramid)
    return oriented, compute_descriptors(oriented, pyramid)


def save_keypoints_csv(path, keypoints: list[Keypoint]) -> None:
    """Debug dump: one ``x,y,scale,orientation`` row per keypoint."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "scale", "orientation"])
        for kp in keypoints:
            writer.writerow([repr(kp.x), repr(kp.y), repr(kp.scale), repr(kp.orientation)])


def save_descriptors(path, descriptors: np.ndarray) -> None:
    """Debug dump: little-endian float32 descriptor matrix with a tiny header."""
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if descriptors.ndim != 2:
        raise SiftError("descriptor dump needs a 2-d matrix")
    with open(path, "wb") as fh:
        fh.write(_DESC_MAGIC)
        fh.write(
            struct.pack(
                "<III", _DESC_VERSION, descriptors.shape[0], descriptors.shape[1]
            )
        )
        fh.write(descriptors.astype("<f4").tobytes())


def load_descriptors(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != _DESC_MAGIC:
            raise SiftError(f"{path}: not a descriptor dump")
        version, n, dim = struct.unpack("<III", fh.read(12))
        if version != _DESC_VERSION:
            raise SiftError(f"{path}: unsupported dump version {version}")
        data = np.frombuffer(fh.read(n * dim * 4), dtype="<f4")
        if data.size != n * dim:
            raise SiftError(f"{path}: truncated descriptor dump")
    return data.reshape(n, dim).astype(np.float64)
