"""Resampling between Cartesian images and uniform polar grids.

Conventions used throughout the package:

* Images are indexed ``img[row, col]``.  A grid ``center`` is ``(row, col)``
  in pixel coordinates, so the default center of an ``n x n`` image is
  ``((n - 1) / 2, (n - 1) / 2)``.
* The polar angle is measured from the +col axis towards the +row axis; the
  point at radius ``r`` and angle ``theta`` is
  ``(row, col) = (cy + r sin(theta), cx + r cos(theta))``.
* Polar samples are stored angle-major, ``samples[i, j]`` being angle
  ``theta_i`` and radius ``r_j``.

Both directions are bilinear and are materialised as sparse matrices, so each
transform is an exact linear map whose transpose is its adjoint.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError, InvalidGridError

__all__ = [
    "PolarGrid",
    "PolarImage",
    "to_polar",
    "from_polar",
    "polar_matrix",
    "cartesian_matrix",
    "sample_bilinear",
    "rotate_image",
]

_EPS = 1e-9


def _next_pow2(x: int) -> int:
    return 1 << max(0, math.ceil(math.log2(max(1, x))))


@dataclass(frozen=True)
class PolarGrid:
    """Uniform (angle x radius) sampling grid.

    Radii are ``linspace(0, max_radius, num_radii)`` and angles are
    ``2 pi i / num_angles`` for ``i < num_angles``.
    """

    num_angles: int
    num_radii: int
    max_radius: float
    center: tuple[float, float]

    def __post_init__(self):
        if int(self.num_angles) != self.num_angles or self.num_angles < 4:
            raise InvalidGridError(f"num_angles must be an integer >= 4, got {self.num_angles}")
        if int(self.num_radii) != self.num_radii or self.num_radii < 1:
            raise InvalidGridError(f"num_radii must be an integer >= 1, got {self.num_radii}")
        if not np.isfinite(self.max_radius) or self.max_radius < 0:
            raise InvalidGridError(f"max_radius must be finite and >= 0, got {self.max_radius}")
        if self.num_radii > 1 and self.max_radius == 0:
            raise InvalidGridError("max_radius must be > 0 when num_radii > 1")
        c = tuple(float(v) for v in self.center)
        if len(c) != 2 or not all(np.isfinite(c)):
            raise InvalidGridError(f"center must be two finite numbers, got {self.center}")
        object.__setattr__(self, "num_angles", int(self.num_angles))
        object.__setattr__(self, "num_radii", int(self.num_radii))
        object.__setattr__(self, "max_radius", float(self.max_radius))
        object.__setattr__(self, "center", c)

    @classmethod
    def for_image(
        cls,
        n: int,
        *,
        cover: str = "corners",
        center: tuple[float, float] | None = None,
        num_radii: int | None = None,
        num_angles: int | None = None,
        angles_per_radius: int = 8,
    ) -> "PolarGrid":
        """Default grid for an ``n x n`` image.

        ``cover="corners"`` reaches the farthest image corner, ``"disk"`` only
        the inscribed disk.  With the default center the corner grid has
        ``ceil(n * sqrt(2) / 2)`` radii; the angle count is the smallest power
        of two that is at least ``angles_per_radius`` times the radius count.
        At the outermost ring of an ``n = 64`` image the default gives an arc
        spacing of about half a pixel.
        """
        if n < 2:
            raise InvalidArgumentError(f"image side must be >= 2, got {n}")
        default_center = center is None
        cy, cx = ((n - 1) / 2.0, (n - 1) / 2.0) if default_center else center
        if not (0 <= cy <= n - 1 and 0 <= cx <= n - 1):
            raise InvalidGridError(f"center {center} lies outside the {n}x{n} image")
        if cover == "corners":
            max_radius = max(
                math.hypot(cy - a, cx - b) for a in (0, n - 1) for b in (0, n - 1)
            )
            k = math.ceil(n * math.sqrt(2) / 2) if default_center else math.ceil(max_radius) + 1
        elif cover == "disk":
            max_radius = min(cy, cx, n - 1 - cy, n - 1 - cx)
            k = math.ceil(n / 2) if default_center else math.ceil(max_radius) + 1
        else:
            raise InvalidArgumentError(f"cover must be 'corners' or 'disk', got {cover!r}")
        k = num_radii if num_radii is not None else max(k, 2)
        m = num_angles if num_angles is not None else max(_next_pow2(angles_per_radius * k), 4)
        return cls(m, k, max_radius, (cy, cx))

    @property
    def radii(self) -> np.ndarray:
        return np.linspace(0.0, self.max_radius, self.num_radii)

    @property
    def angles(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.num_angles) / self.num_angles

    @property
    def dr(self) -> float:
        if self.num_radii == 1:
            return self.max_radius
        return self.max_radius / (self.num_radii - 1)

    @property
    def dtheta(self) -> float:
        return 2 * np.pi / self.num_angles

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_angles, self.num_radii)

    def radial_weights(self) -> np.ndarray:
        """Midpoint-rule weights for the radial integral of ``r dr``.

        Ring ``j > 0`` gets ``r_j dr`` (its annulus area over ``2 pi``); the
        central sample gets the area of the disk of radius ``dr / 2``.
        """
        w = self.radii * self.dr
        w[0] = self.dr**2 / 8.0
        return w

    def to_dict(self) -> dict:
        return {
            "num_angles": self.num_angles,
            "num_radii": self.num_radii,
            "max_radius": self.max_radius,
            "center": list(self.center),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolarGrid":
        return cls(d["num_angles"], d["num_radii"], d["max_radius"], tuple(d["center"]))


@dataclass(frozen=True, eq=False)
class PolarImage:
    samples: np.ndarray
    grid: PolarGrid = field(repr=False)

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.shape != self.grid.shape:
            raise InvalidArgumentError(
                f"samples shape {s.shape} does not match grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(s)):
            raise InvalidArgumentError("polar samples contain non-finite values")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)


def _check_center_inside(grid: PolarGrid, n: int) -> None:
    cy, cx = grid.center
    if not (0 <= cy <= n - 1 and 0 <= cx <= n - 1):
        raise InvalidGridError(f"grid center {grid.center} lies outside the {n}x{n} image")


def _bilinear_stencil(rows, cols, n_rows, n_cols):
    """Neighbour indices and weights; points outside the footprint get weight 0."""
    rows = np.asarray(rows, dtype=float)
    cols = np.asarray(cols, dtype=float)
    inside = (
        (rows >= -_EPS) & (rows <= n_rows - 1 + _EPS) & (cols >= -_EPS) & (cols <= n_cols - 1 + _EPS)
    )
    r = np.clip(rows, 0, n_rows - 1)
    c = np.clip(cols, 0, n_cols - 1)
    r0 = np.minimum(np.floor(r).astype(np.int64), max(n_rows - 2, 0))
    c0 = np.minimum(np.floor(c).astype(np.int64), max(n_cols - 2, 0))
    fr = r - r0
    fc = c - c0
    r1 = np.minimum(r0 + 1, n_rows - 1)
    c1 = np.minimum(c0 + 1, n_cols - 1)
    m = inside.astype(float)
    idx = (r0 * n_cols + c0, r0 * n_cols + c1, r1 * n_cols + c0, r1 * n_cols + c1)
    wts = (
        (1 - fr) * (1 - fc) * m,
        (1 - fr) * fc * m,
        fr * (1 - fc) * m,
        fr * fc * m,
    )
    return idx, wts


def sample_bilinear(img: np.ndarray, rows, cols) -> np.ndarray:
    """Bilinear interpolation of ``img`` at real-valued ``(rows, cols)``.

    Points outside ``[0, n_rows - 1] x [0, n_cols - 1]`` return 0.
    """
    img = np.asarray(img)
    flat = img.reshape(-1)
    idx, wts = _bilinear_stencil(rows, cols, *img.shape)
    out = np.zeros(np.shape(rows), dtype=np.result_type(img.dtype, float))
    for k, w in zip(idx, wts):
        out += w * flat[k]
    return out


def rotate_image(img: np.ndarray, angle: float, center=None) -> np.ndarray:
    """Rotate ``img`` by ``angle`` radians (+col towards +row) with bilinear resampling."""
    img = np.asarray(img, dtype=float)
    n_rows, n_cols = img.shape
    cy, cx = ((n_rows - 1) / 2, (n_cols - 1) / 2) if center is None else center
    rr, cc = np.mgrid[0:n_rows, 0:n_cols].astype(float)
    dy, dx = rr - cy, cc - cx
    ca, sa = math.cos(angle), math.sin(angle)
    # inverse map: source = R(-angle) @ target
    src_c = cx + ca * dx + sa * dy
    src_r = cy - sa * dx + ca * dy
    return sample_bilinear(img, src_r, src_c)


@functools.lru_cache(maxsize=32)
def polar_matrix(grid: PolarGrid, n: int) -> sp.csr_matrix:
    """Sparse ``(M*K, n*n)`` matrix of the Cartesian -> polar resampling."""
    _check_center_inside(grid, n)
    th = grid.angles[:, None]
    r = grid.radii[None, :]
    rows = grid.center[0] + r * np.sin(th)
    cols = grid.center[1] + r * np.cos(th)
    idx, wts = _bilinear_stencil(rows.ravel(), cols.ravel(), n, n)
    out_rows = np.tile(np.arange(rows.size), 4)
    mat = sp.csr_matrix(
        (np.concatenate(wts), (out_rows, np.concatenate(idx))), shape=(rows.size, n * n)
    )
    mat.eliminate_zeros()
    return mat


@functools.lru_cache(maxsize=32)
def cartesian_matrix(grid: PolarGrid, n: int) -> sp.csr_matrix:
    """Sparse ``(n*n, M*K)`` matrix of the polar -> Cartesian resampling."""
    _check_center_inside(grid, n)
    cy, cx = grid.center
    if grid.max_radius + _EPS < min(cy, cx, n - 1 - cy, n - 1 - cx):
        raise InvalidArgumentError(
            f"grid with max_radius {grid.max_radius:g} does not cover the inscribed disk "
            f"of a {n}x{n} image"
        )
    if grid.num_radii < 2:
        raise InvalidArgumentError("from_polar needs at least two radii")
    m, k = grid.shape
    rr, cc = np.mgrid[0:n, 0:n].astype(float)
    dy, dx = (rr - cy).ravel(), (cc - cx).ravel()
    rho = np.hypot(dy, dx)
    phi = np.mod(np.arctan2(dy, dx), 2 * np.pi)
    a = rho / grid.dr
    inside = a <= (k - 1) + _EPS
    a = np.minimum(a, k - 1)
    j0 = np.minimum(np.floor(a).astype(np.int64), k - 2)
    fj = a - j0
    b = phi / grid.dtheta
    i0f = np.floor(b)
    fi = b - i0f
    i0 = np.mod(i0f.astype(np.int64), m)
    i1 = np.mod(i0 + 1, m)
    mask = inside.astype(float)
    pix = np.arange(n * n)
    cols = np.concatenate([i0 * k + j0, i0 * k + j0 + 1, i1 * k + j0, i1 * k + j0 + 1])
    vals = np.concatenate(
        [
            (1 - fi) * (1 - fj) * mask,
            (1 - fi) * fj * mask,
            fi * (1 - fj) * mask,
            fi * fj * mask,
        ]
    )
    mat = sp.csr_matrix((vals, (np.tile(pix, 4), cols)), shape=(n * n, m * k))
    mat.eliminate_zeros()
    return mat


def _as_image(img) -> np.ndarray:
    a = np.asarray(img, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidArgumentError(f"expected a square 2D image, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError("image contains non-finite values")
    return a


def to_polar(img, grid: PolarGrid) -> PolarImage:
    a = _as_image(img)
    vals = polar_matrix(grid, a.shape[0]) @ a.ravel()
    return PolarImage(vals.reshape(grid.shape), grid)


def from_polar(pimg: PolarImage, n: int) -> np.ndarray:
    vals = cartesian_matrix(pimg.grid, int(n)) @ pimg.samples.ravel()
    return vals.reshape(n, n)
