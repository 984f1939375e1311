from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import PIXEL_MAX


@dataclass(frozen=True)
class AugmentationSpec:
    """Label-preserving feature perturbations applied to training batches in pixel units."""

    enabled: bool = False
    jitter_sigma: float = 0.0
    mask_prob: float = 0.0
    shift: int = 0
    hflip: bool = False

    @classmethod
    def from_dict(cls, d: dict | None) -> "AugmentationSpec":
        return cls(**(d or {}))


def hflip(images: np.ndarray, grid_shape: tuple, flip_rows: np.ndarray) -> np.ndarray:
    """Mirror the selected rows of flattened (n, h*w) images left-right."""
    h, w = grid_shape
    out = images.reshape(-1, h, w).copy()
    out[flip_rows] = out[flip_rows][:, :, ::-1]
    return out.reshape(images.shape)


def _shift(images: np.ndarray, grid_shape: tuple, dy: np.ndarray, dx: np.ndarray) -> np.ndarray:
    h, w = grid_shape
    grid = images.reshape(-1, h, w)
    out = np.zeros_like(grid)
    for i in range(grid.shape[0]):
        src = grid[i]
        y0, x0 = int(dy[i]), int(dx[i])
        ys = slice(max(0, y0), h + min(0, y0))
        xs = slice(max(0, x0), w + min(0, x0))
        yd = slice(max(0, -y0), h + min(0, -y0))
        xd = slice(max(0, -x0), w + min(0, -x0))
        out[i][ys, xs] = src[yd, xd]
    return out.reshape(images.shape)


def augment(features: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator,
            grid_shape: tuple | None = None) -> np.ndarray:
    """Return a perturbed copy of a pixel-unit batch; labels are never touched."""
    if not spec.enabled:
        return features
    x = np.array(features, dtype=np.float64, copy=True)
    n = x.shape[0]
    if grid_shape is not None:
        if spec.shift > 0:
            dy = rng.integers(-spec.shift, spec.shift + 1, size=n)
            dx = rng.integers(-spec.shift, spec.shift + 1, size=n)
            x = _shift(x, grid_shape, dy, dx)
        if spec.hflip:
            x = hflip(x, grid_shape, rng.random(n) < 0.5)
    if spec.jitter_sigma > 0:
        x = x + rng.normal(0.0, spec.jitter_sigma, size=x.shape)
    if spec.mask_prob > 0:
        x = np.where(rng.random(x.shape) < spec.mask_prob, 0.0, x)
    return np.clip(x, 0.0, PIXEL_MAX)
