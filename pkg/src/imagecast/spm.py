"""Spatial-pyramid max pooling of codes and the feature file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .llc import LlcCode

# Pyramid grids per level; global region numbering is 0 (whole image),
# 1..4 (2x2, row-major), 5..20 (4x4, row-major).
LEVELS = (1, 2, 4)
N_REGIONS = sum(g * g for g in LEVELS)

_MAGIC = b"ICFV"
_VERSION = 1


class FeatureFileError(ValueError):
    """Raised on a corrupt or mismatched feature file."""


@dataclass
class FeatureVector:
    """A pooled per-series feature: ``n_regions * k`` values."""

    series_id: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)


def region_ids(x: float, y: float, size: int) -> np.ndarray:
    """Global region indices containing an image point, one per level.

    Cells are half-open; the last row/column is closed at ``size`` so
    boundary points stay inside. A point at the exact midline lands in the
    lower-right cells.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    if not (0.0 <= x <= size and 0.0 <= y <= size):
        raise ValueError(f"point ({x}, {y}) outside [0, {size}]^2")
    out = np.empty(len(LEVELS), dtype=np.int64)
    base = 0
    for li, grid in enumerate(LEVELS):
        col = min(int(x * grid / size), grid - 1)
        row = min(int(y * grid / size), grid - 1)
        out[li] = base + row * grid + col
        base += grid * grid
    return out


def pool(
    positions: np.ndarray, codes: list[LlcCode], k_bases: int, size: int
) -> np.ndarray:
    """Max-pool scattered codes over the pyramid regions.

    Each code is scattered to a dense ``k_bases`` vector at its indices;
    every region takes the elementwise max over the dense codes of the
    keypoints it contains. Regions with no keypoints stay exactly zero.
    Returns the concatenation over global region order
    (``N_REGIONS * k_bases`` values).
    """
    positions = np.asarray(positions, dtype=np.float64)
    if len(codes) != positions.shape[0]:
        raise ValueError("positions and codes must align")
    out = np.zeros((N_REGIONS, k_bases))
    if not codes:
        return out.reshape(-1)
    dense = np.zeros((len(codes), k_bases))
    for i, c in enumerate(codes):
        dense[i, c.indices] = c.coefficients
    members: list[list[int]] = [[] for _ in range(N_REGIONS)]
    for i in range(positions.shape[0]):
        for r in region_ids(positions[i, 0], positions[i, 1], size):
            members[int(r)].append(i)
    for r, rows in enumerate(members):
        if rows:
            out[r] = dense[rows].max(axis=0)
    return out.reshape(-1)


def write_features(path, ids: list[str], matrix: np.ndarray, k: int, regions: int = N_REGIONS) -> None:
    """Write a feature file: header (magic, version, K, regions) + records.

    Each record is a length-prefixed UTF-8 id followed by ``K * regions``
    little-endian float32 values. The same format ingests externally
    computed feature vectors of arbitrary dimension (declare ``k=dim``,
    ``regions=1``).
    """
    matrix = np.asarray(matrix)
    dim = k * regions
    if matrix.ndim != 2 or matrix.shape != (len(ids), dim):
        raise FeatureFileError(
            f"matrix shape {matrix.shape} != ({len(ids)}, {dim})"
        )
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", _VERSION, k, regions))
        for i, sid in enumerate(ids):
            raw = sid.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise FeatureFileError(f"id too long: {sid!r}")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(matrix[i].astype("<f4").tobytes())


def read_features(path) -> tuple[list[str], np.ndarray, int, int]:
    """Read a feature file back as (ids, float64 matrix, K, regions)."""
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise FeatureFileError(f"{path}: not a feature file")
        version, k, regions = struct.unpack("<III", fh.read(12))
        if version != _VERSION:
            raise FeatureFileError(f"{path}: unsupported version {version}")
        dim = k * regions
        ids: list[str] = []
        rows: list[np.ndarray] = []
        while True:
            head = fh.read(2)
            if not head:
                break
            if len(head) != 2:
                raise FeatureFileError(f"{path}: truncated record header")
            (id_len,) = struct.unpack("<H", head)
            raw = fh.read(id_len)
            if len(raw) != id_len:
                raise FeatureFileError(f"{path}: truncated id")
            payload = fh.read(dim * 4)
            if len(payload) != dim * 4:
                raise FeatureFileError(f"{path}: truncated record for {raw!r}")
            ids.append(raw.decode("utf-8"))
            rows.append(np.frombuffer(payload, dtype="<f4").astype(np.float64))
    matrix = np.vstack(rows) if rows else np.zeros((0, dim))
    return ids, matrix, int(k), int(regions)
