"""Frequency features for the linear attribution classifier.

Per-channel 2-D type-II DCT (unnormalized convention), log of absolute
coefficients stabilized by a small epsilon, then average-pooled on a
fixed 16x16 grid per channel so the feature length is independent of the
input size.
"""

from __future__ import annotations

import numpy as np
import scipy.fft

from ..core.images import Image
from ..errors import ContractError

DCT_EPS = 1e-8
POOL_GRID = 16


def dct_log_map(x: Image, eps: float = DCT_EPS) -> np.ndarray:
    """Per-channel log-magnitude DCT map, same shape as the input."""
    if x.ndim != 3:
        raise ContractError(f"expected (C,H,W), got {x.shape}")
    coef = scipy.fft.dctn(x.astype(np.float64), type=2, axes=(1, 2))
    return np.log(np.abs(coef) + eps)


def _pool_cells(m: np.ndarray, grid: int) -> np.ndarray:
    h, w = m.shape
    hb = [h * i // grid for i in range(grid + 1)]
    wb = [w * i // grid for i in range(grid + 1)]
    out = np.empty((grid, grid), dtype=np.float64)
    for i in range(grid):
        for j in range(grid):
            out[i, j] = m[hb[i]:hb[i + 1], wb[j]:wb[j + 1]].mean()
    return out


def dct_features(x: Image, grid: int = POOL_GRID,
                 eps: float = DCT_EPS) -> np.ndarray:
    """Fixed-length frequency feature vector (3 * grid * grid values)."""
    if min(x.shape[1], x.shape[2]) < grid:
        raise ContractError(
            f"image sides must be >= the {grid}x{grid} pooling grid"
        )
    logmap = dct_log_map(x, eps)
    pooled = np.stack([_pool_cells(logmap[c], grid) for c in range(3)])
    return pooled.reshape(-1)
