"""Locality-constrained linear coding of descriptors over a codebook."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .codebook import Codebook, knn

logger = logging.getLogger(__name__)

DEFAULT_KNN = 5
DEFAULT_LAMBDA = math.exp(-4.0)
# Below this the normalizing sum is treated as vanished and the coefficients
# fall back to a uniform split.
_SUM_EPS = 1e-12


@dataclass
class LlcCode:
    """Sparse reconstruction coefficients over the k selected bases.

    Coefficients sum to one; ``indices[i]`` names the basis that
    ``coefficients[i]`` belongs to. ``uniform_fallback`` marks the flagged
    degenerate path.
    """

    indices: np.ndarray
    coefficients: np.ndarray
    lam: float
    uniform_fallback: bool = False


def code(
    x: np.ndarray,
    codebook: Codebook,
    knn_k: int = DEFAULT_KNN,
    lam: float = DEFAULT_LAMBDA,
) -> LlcCode:
    """Code one descriptor against its k nearest bases.

    Solves the locality-restricted least-squares reconstruction with the
    trace-scaled ridge: shifted bases ``z_j = b_j - x`` give the Gram matrix
    ``C = Z Z^T``, regularized as ``C + lam * tr(C) * I``; the solve against
    the ones vector is normalized to sum to one. Degenerate systems
    (coincident bases, vanished sum) fall back to uniform ``1/k``, flagged.
    """
    if lam < 0.0:
        raise ValueError("lam must be non-negative")
    idx = knn(x, codebook, knn_k)
    z = codebook.bases[idx] - np.asarray(x, dtype=np.float64)
    gram = z @ z.T
    ridge = lam * float(np.trace(gram))
    uniform = False
    if ridge <= 0.0 and float(np.abs(gram).max(initial=0.0)) == 0.0:
        # Every selected basis coincides with x: split the weight evenly.
        coef = np.full(knn_k, 1.0 / knn_k)
        uniform = True
    else:
        system = gram + ridge * np.eye(knn_k)
        try:
            raw = np.linalg.solve(system, np.ones(knn_k))
        except np.linalg.LinAlgError:
            raw = None
        if raw is None or not np.all(np.isfinite(raw)):
            coef = np.full(knn_k, 1.0 / knn_k)
            uniform = True
            logger.debug("llc solve failed; uniform fallback")
        else:
            total = float(raw.sum())
            if abs(total) < _SUM_EPS:
                coef = np.full(knn_k, 1.0 / knn_k)
                uniform = True
                logger.debug("llc sum vanished; uniform fallback")
            else:
                coef = raw / total
    return LlcCode(indices=idx, coefficients=coef, lam=lam, uniform_fallback=uniform)


def code_all(
    descriptors: np.ndarray,
    codebook: Codebook,
    knn_k: int = DEFAULT_KNN,
    lam: float = DEFAULT_LAMBDA,
) -> list[LlcCode]:
    """Elementwise :func:`code` over descriptor rows, order preserved."""
    descriptors = np.asarray(descriptors, dtype=np.float64)
    return [code(descriptors[i], codebook, knn_k, lam) for i in range(descriptors.shape[0])]
