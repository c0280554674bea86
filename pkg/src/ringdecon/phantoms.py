"""Random test scenes: smooth blobs, thin filaments and bright points, scaled to [0, 1]."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

__all__ = ["phantom", "smooth_texture"]


def smooth_texture(n: int, rng: np.random.Generator, sigma: float = 1.0) -> np.ndarray:
    """Gaussian-filtered uniform noise rescaled to [0, 1]."""
    a = ndimage.gaussian_filter(rng.random((n, n)), sigma)
    return (a - a.min()) / (a.max() - a.min())


def phantom(
    n: int,
    rng: np.random.Generator,
    *,
    blobs: int = 6,
    filaments: int = 4,
    points: int = 10,
    margin: int = 0,
) -> np.ndarray:
    """Fluorescence-like scene on an ``n x n`` grid with values in [0, 1].

    Objects are kept ``margin`` pixels away from the border.
    """
    yy, xx = np.mgrid[0:n, 0:n].astype(float)
    img = np.zeros((n, n))
    lo, hi = margin, n - 1 - margin
    for _ in range(blobs):
        cy, cx = rng.uniform(lo, hi, 2)
        sy, sx = rng.uniform(1.0, n / 10 + 1.0, 2)
        img += rng.uniform(0.3, 1.0) * np.exp(-0.5 * (((yy - cy) / sy) ** 2 + ((xx - cx) / sx) ** 2))
    for _ in range(filaments):
        y0, x0, y1, x1 = rng.uniform(lo, hi, 4)
        t = np.linspace(0, 1, 4 * n)
        line = np.zeros((n, n))
        ry = np.clip(np.round(y0 + t * (y1 - y0)).astype(int), 0, n - 1)
        rx = np.clip(np.round(x0 + t * (x1 - x0)).astype(int), 0, n - 1)
        line[ry, rx] = 1.0
        img += rng.uniform(0.3, 0.8) * ndimage.gaussian_filter(line, 0.7) / 0.25
    for _ in range(points):
        r, c = rng.integers(lo, hi + 1, 2)
        img[r, c] += rng.uniform(0.5, 1.0)
    img -= img.min()
    peak = img.max()
    return img / peak if peak > 0 else img
