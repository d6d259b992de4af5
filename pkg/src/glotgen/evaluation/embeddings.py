"""Deterministic grid embeddings standing in for large vision encoders.

Two built-in backends with complementary sensitivities:

  histogram-moment   per-color cell histogram + centroids + second central
                     moments (d = 96). Sensitive to what is present and
                     roughly where; the moment block distinguishes layouts
                     that share a histogram.
  downsample-raw     4x4 average-pooled per-color one-hot planes (d = 256).
                     Sensitive to raw spatial structure.

An external backend reads precomputed vectors from a JSONL file of
{"image_id": ..., "vector": [...]}, so real encoders can be plugged in
without touching the suite.
"""

from __future__ import annotations

import json

import numpy as np

from ..vocab import TokenGrid

PALETTE_K = 16


class EmbeddingError(ValueError):
    pass


class HistogramMomentBackend:
    name = "histogram-moment"
    dim = PALETTE_K * 6

    def embed(self, grid: TokenGrid, image_id: str | None = None) -> np.ndarray:
        side = grid.side
        cells = grid.cells
        vec = np.zeros((PALETTE_K, 6), dtype=np.float64)
        denom = side * side
        for color in range(PALETTE_K):
            rr, cc = np.nonzero(cells == color)
            if rr.size == 0:
                continue
            vec[color, 0] = rr.size / denom
            r_bar, c_bar = rr.mean(), cc.mean()
            vec[color, 1] = r_bar / (side - 1)
            vec[color, 2] = c_bar / (side - 1)
            vec[color, 3] = np.mean((rr - r_bar) ** 2) / denom
            vec[color, 4] = np.mean((cc - c_bar) ** 2) / denom
            vec[color, 5] = np.mean((rr - r_bar) * (cc - c_bar)) / denom
        flat = vec.reshape(-1)
        norm = np.linalg.norm(flat)
        return flat / norm if norm > 0 else flat


class DownsampleRawBackend:
    name = "downsample-raw"
    dim = 4 * 4 * PALETTE_K

    def embed(self, grid: TokenGrid, image_id: str | None = None) -> np.ndarray:
        side = grid.side
        if side % 4:
            raise EmbeddingError("downsample-raw needs a side divisible by 4")
        block = side // 4
        onehot = np.zeros((side, side, PALETTE_K), dtype=np.float64)
        rr, cc = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
        onehot[rr, cc, grid.cells.astype(int)] = 1.0
        pooled = onehot.reshape(4, block, 4, block, PALETTE_K).mean(axis=(1, 3))
        flat = pooled.reshape(-1)
        norm = np.linalg.norm(flat)
        return flat / norm if norm > 0 else flat


class ExternalFileBackend:
    """Precomputed embeddings keyed by image id."""

    def __init__(self, path, name: str = "external"):
        self.name = name
        self._table: dict[str, np.ndarray] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                self._table[str(rec["image_id"])] = np.asarray(rec["vector"],
                                                               dtype=np.float64)

    def embed(self, grid: TokenGrid, image_id: str | None = None) -> np.ndarray:
        if image_id is None or image_id not in self._table:
            raise EmbeddingError(f"no external embedding for image {image_id!r}")
        return self._table[image_id]


BUILTIN_BACKENDS = {
    "histogram-moment": HistogramMomentBackend,
    "downsample-raw": DownsampleRawBackend,
}


def get_backend(name: str, external_path=None):
    if name in BUILTIN_BACKENDS:
        return BUILTIN_BACKENDS[name]()
    if external_path is not None:
        return ExternalFileBackend(external_path, name=name)
    raise EmbeddingError(f"unknown embedding backend {name!r}")


def builtin_embed(grid: TokenGrid) -> np.ndarray:
    """Default histogram-moment feature vector."""
    return HistogramMomentBackend().embed(grid)
