"""Descriptor codebook: seeded k-means and nearest-basis queries."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_K = 200
DEFAULT_MAX_ITERS = 100
DEFAULT_TOL = 1e-4
DEFAULT_POOL_CAP = 200_000

_MAGIC = b"ICCB"
_VERSION = 1


class CodebookError(ValueError):
    """Raised on invalid training input or a corrupt codebook file."""


@dataclass
class Codebook:
    """A set of basis descriptors (rows) with the seed that produced them."""

    bases: np.ndarray
    seed: int
    inertia_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.bases = np.asarray(self.bases, dtype=np.float64)
        if self.bases.ndim != 2 or self.bases.shape[0] < 1:
            raise CodebookError("codebook needs a (K, dim) basis matrix")

    @property
    def k(self) -> int:
        return int(self.bases.shape[0])

    @property
    def dim(self) -> int:
        return int(self.bases.shape[1])


def sample_descriptor_pool(
    descriptors: np.ndarray, cap: int = DEFAULT_POOL_CAP, seed: int = 0
) -> np.ndarray:
    """Seeded uniform subsample (without replacement) down to ``cap`` rows."""
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if descriptors.shape[0] <= cap:
        return descriptors
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(descriptors.shape[0], size=cap, replace=False))
    return descriptors[idx]


def _pairwise_sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # ||x||^2 - 2 x.c + ||c||^2, clipped: the expansion can go slightly negative.
    d = (
        np.sum(x * x, axis=1)[:, None]
        - 2.0 * (x @ centers.T)
        + np.sum(centers * centers, axis=1)[None, :]
    )
    np.maximum(d, 0.0, out=d)
    return d


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            # All remaining mass sits on already-chosen points.
            centers[c:] = centers[c - 1]
            break
        nxt = int(rng.choice(n, p=d2 / total))
        centers[c] = x[nxt]
        np.minimum(d2, np.sum((x - centers[c]) ** 2, axis=1), out=d2)
    return centers


def train_codebook(
    descriptors: np.ndarray,
    k: int = DEFAULT_K,
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> Codebook:
    """Lloyd k-means with k-means++ seeding over a descriptor pool.

    Fewer than ``k`` descriptors reduce ``k`` to the pool size (warned).
    Empty clusters are reseeded to the point currently farthest from its
    centroid (ties to the lowest index). Iteration stops at ``max_iters``
    or when the relative inertia improvement drops below ``tol``.
    """
    x = np.asarray(descriptors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise CodebookError("training needs a (n, dim) descriptor matrix")
    if not np.all(np.isfinite(x)):
        raise CodebookError("descriptors must be finite")
    if k < 1:
        raise CodebookError("k must be >= 1")
    n = x.shape[0]
    if n < k:
        logger.warning("only %d descriptors for k=%d; reducing k", n, k)
        k = n
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(x, k, rng)
    history: list[float] = []
    prev_inertia = np.inf
    for _ in range(max_iters):
        d2 = _pairwise_sq_dists(x, centers)
        assign = np.argmin(d2, axis=1)
        point_d2 = d2[np.arange(n), assign]
        inertia = float(point_d2.sum())
        history.append(inertia)

        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, x)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not np.all(nonempty):
            taken = point_d2.copy()
            for c in np.flatnonzero(~nonempty):
                far = int(np.argmax(taken))
                centers[c] = x[far]
                taken[far] = -1.0
        if prev_inertia < np.inf:
            denom = max(prev_inertia, np.finfo(np.float64).tiny)
            if abs(prev_inertia - inertia) / denom < tol:
                break
        prev_inertia = inertia
    return Codebook(bases=centers, seed=seed, inertia_history=history)


def knn(x: np.ndarray, codebook: Codebook, k: int) -> np.ndarray:
    """Indices of the k nearest bases, ascending distance, ties to lower index."""
    if k < 1 or k > codebook.k:
        raise CodebookError(f"knn needs 1 <= k <= {codebook.k}, got {k}")
    x = np.asarray(x, dtype=np.float64)
    diff = codebook.bases - x
    d2 = np.einsum("ij,ij->i", diff, diff)
    order = np.argsort(d2, kind="stable")
    return order[:k]


def save_codebook(codebook: Codebook, path) -> None:
    """Binary format: magic, version, K, dim, seed, row-major float64 bases."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIIq", _VERSION, codebook.k, codebook.dim, codebook.seed))
        fh.write(codebook.bases.astype("<f8").tobytes())


def load_codebook(path) -> Codebook:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise CodebookError(f"{path}: not a codebook file")
        version, k, dim, seed = struct.unpack("<IIIq", fh.read(20))
        if version != _VERSION:
            raise CodebookError(f"{path}: unsupported version {version}")
        data = np.frombuffer(fh.read(k * dim * 8), dtype="<f8")
        if data.size != k * dim:
            raise CodebookError(f"{path}: truncated basis data")
    return Codebook(bases=data.reshape(k, dim).copy(), seed=seed)
