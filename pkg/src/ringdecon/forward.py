"""Forward blur models for rotationally symmetric imaging systems.

Three models share one PSF description (a radial line of canonical PSFs, each
for a source on the +x axis):

* :func:`superpose_blur` places the correctly rotated PSF at every source
  pixel.  It is exact up to PSF interpolation and costs ``O(N^4)``.
* :func:`lsi_convolve` pretends the center PSF holds everywhere.
* :func:`ring_convolve` resamples to polar coordinates and performs one
  angular convolution per (source ring, output ring) pair, ``O(N^3 log N)``.

Intensity leaving the ``N x N`` frame is discarded by all three.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np
import scipy.fft as sfft
from scipy import sparse
from scipy.signal import fftconvolve

from .errors import IntractableError, InvalidArgumentError
from .polar import PolarGrid, PolarImage, cartesian_matrix, sample_bilinear
from .seidel import OpticalConfig, Psf, PsfRadialStack, SeidelCoeffs, normalized_radius, psf_at

__all__ = [
    "RingSpectrumStack",
    "precompute_ring_spectra",
    "ring_convolve",
    "ring_convolve_polar",
    "ring_convolve_adjoint",
    "ring_convolve_polar_adjoint",
    "source_density_matrix",
    "superpose_blur",
    "superpose_psfs",
    "lsi_convolve",
    "lsi_convolve_adjoint",
]


@dataclass(frozen=True, eq=False)
class RingSpectrumStack:
    """Angular spectra of the polar-resampled PSFs.

    ``half[j, i, xi]`` is the real-input FFT over angle of the PSF for source
    radius ``r_j`` sampled on output ring ``rho_i``, for ``xi = 0 .. M // 2``.
    The negative frequencies follow from Hermitian symmetry; :meth:`full`
    materialises the ``K x K x M`` array.
    """

    half: np.ndarray
    grid: PolarGrid = field(repr=False)

    def __post_init__(self):
        k, m = self.grid.num_radii, self.grid.num_angles
        if self.half.shape != (k, k, m // 2 + 1):
            raise InvalidArgumentError(
                f"spectra shape {self.half.shape} does not match grid ({k}, {k}, {m // 2 + 1})"
            )
        if not np.all(np.isfinite(self.half)):
            raise InvalidArgumentError("ring spectra contain non-finite values")
        self.half.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int, int]:
        k, m = self.grid.num_radii, self.grid.num_angles
        return (k, k, m)

    def full(self) -> np.ndarray:
        m = self.grid.num_angles
        neg = np.conj(self.half[..., 1 : (m + 1) // 2][..., ::-1])
        return np.concatenate([self.half, neg], axis=-1)


def precompute_ring_spectra(
    stack: PsfRadialStack, grid: PolarGrid, *, angular_oversample: int = 1
) -> RingSpectrumStack:
    """Polar-resample each PSF around its source position and FFT over angle.

    With ``angular_oversample > 1`` each PSF ring is sampled that many times
    more densely and only the lowest ``M`` angular frequencies are kept, which
    band-limits the PSF ring instead of aliasing it onto the coarse grid.
    """
    if len(stack) != grid.num_radii or not np.allclose(stack.grid.radii, grid.radii):
        raise InvalidArgumentError("PSF stack radii do not match the polar grid")
    os_ = int(angular_oversample)
    if os_ < 1:
        raise InvalidArgumentError("angular_oversample must be >= 1")
    k, m = grid.num_radii, grid.num_angles
    mo = m * os_
    half = np.zeros((k, k, m // 2 + 1), dtype=complex)
    rho = grid.radii
    phi = 2 * np.pi * np.arange(mo) / mo
    cphi, sphi = np.cos(phi), np.sin(phi)
    for j, psf in enumerate(stack.psfs):
        h = psf.intensity
        c = h.shape[0] // 2
        reach = math.hypot(c, h.shape[0] - 1 - c) + 1.0
        r_j = grid.radii[j]
        band = np.nonzero(np.abs(rho - r_j) <= reach)[0]
        if band.size == 0:
            continue
        rows = c + rho[band, None] * sphi[None, :]
        cols = c + rho[band, None] * cphi[None, :] - r_j
        rings = sample_bilinear(h, rows, cols)
        spec = sfft.rfft(rings, axis=-1)[:, : m // 2 + 1] / os_
        if m % 2 == 0:
            # the coarse-grid Nyquist bin of a real ring is real
            spec[:, -1] = spec[:, -1].real
        half[j, band] = spec
    return RingSpectrumStack(half, grid)


def _weights(grid: PolarGrid) -> np.ndarray:
    return grid.radial_weights() * grid.dtheta


def ring_convolve_polar(pimg: PolarImage, spectra: RingSpectrumStack) -> PolarImage:
    """Ring convolution on the polar grid (no Cartesian resampling)."""
    grid = spectra.grid
    if pimg.grid.shape != grid.shape:
        raise InvalidArgumentError(f"polar image shape {pimg.grid.shape} != spectra grid {grid.shape}")
    g = sfft.rfft(pimg.samples.T, axis=-1)
    f_hat = np.einsum("jx,jix->ix", g * _weights(grid)[:, None], spectra.half, optimize=True)
    f = sfft.irfft(f_hat, n=grid.num_angles, axis=-1)
    return PolarImage(f.T, pimg.grid)


def ring_convolve_polar_adjoint(pimg: PolarImage, spectra: RingSpectrumStack) -> PolarImage:
    grid = spectra.grid
    if pimg.grid.shape != grid.shape:
        raise InvalidArgumentError(f"polar image shape {pimg.grid.shape} != spectra grid {grid.shape}")
    y = sfft.rfft(pimg.samples.T, axis=-1)
    x_hat = np.einsum("ix,jix->jx", y, np.conj(spectra.half), optimize=True)
    x_hat *= _weights(grid)[:, None]
    x = sfft.irfft(x_hat, n=grid.num_angles, axis=-1)
    return PolarImage(x.T, pimg.grid)


def _check_square(img, name="image"):
    a = np.asarray(img, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidArgumentError(f"{name} must be a square 2D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return a


@lru_cache(maxsize=16)
def source_density_matrix(grid: PolarGrid, n: int) -> sparse.csr_matrix:
    """Map pixel intensities to polar-grid source densities, conserving mass.

    Each pixel's intensity is split over its four enclosing polar nodes with
    the bilinear weights of :func:`~ringdecon.polar.from_polar` and divided by
    the node's quadrature area, so the quadrature sum of the result equals the
    pixel sum.  Unlike bilinear gathering, this does not smooth point sources
    by a pixel-sized kernel, which matters for sharp PSFs.
    """
    area = np.tile(_weights(grid), grid.num_angles)
    m = sparse.diags(1.0 / area) @ cartesian_matrix(grid, n).T
    return sparse.csr_matrix(m)


def _ring_grid(spectra, grid):
    grid = spectra.grid if grid is None else grid
    if grid.shape != spectra.grid.shape:
        raise InvalidArgumentError("grid does not match the spectra")
    return grid


def ring_convolve(obj, spectra: RingSpectrumStack, grid: PolarGrid | None = None) -> np.ndarray:
    """Blur ``obj`` with the LRI system described by ``spectra``.

    The object is moved onto the polar grid with :func:`source_density_matrix`,
    convolved ring by ring, and gathered back with the bilinear
    :func:`~ringdecon.polar.cartesian_matrix`.
    """
    grid = _ring_grid(spectra, grid)
    a = _check_square(obj, "object")
    n = a.shape[0]
    g = (source_density_matrix(grid, n) @ a.ravel()).reshape(grid.shape)
    f = ring_convolve_polar(PolarImage(g, grid), spectra).samples
    return (cartesian_matrix(grid, n) @ f.ravel()).reshape(n, n)


def ring_convolve_adjoint(img, spectra: RingSpectrumStack, grid: PolarGrid | None = None) -> np.ndarray:
    """Exact transpose of :func:`ring_convolve`."""
    grid = _ring_grid(spectra, grid)
    a = _check_square(img)
    n = a.shape[0]
    y = (cartesian_matrix(grid, n).T @ a.ravel()).reshape(grid.shape)
    x = ring_convolve_polar_adjoint(PolarImage(y, grid), spectra).samples
    return (source_density_matrix(grid, n).T @ x.ravel()).reshape(n, n)


@numba.njit(cache=True)
def _splat_rotated(out, psf, ys, xs, vals, thetas):  # pragma: no cover - jitted
    n = out.shape[0]
    p = psf.shape[0]
    c = p // 2
    reach = math.sqrt(2.0) * (p - c) + 1.0
    for s in range(ys.shape[0]):
        uy = ys[s]
        ux = xs[s]
        v = vals[s]
        ct = math.cos(thetas[s])
        st = math.sin(thetas[s])
        y_lo = max(0, int(math.floor(uy - reach)))
        y_hi = min(n - 1, int(math.ceil(uy + reach)))
        x_lo = max(0, int(math.floor(ux - reach)))
        x_hi = min(n - 1, int(math.ceil(ux + reach)))
        for y in range(y_lo, y_hi + 1):
            dy = y - uy
            for x in range(x_lo, x_hi + 1):
                dx = x - ux
                pc = c + ct * dx + st * dy
                pr = c - st * dx + ct * dy
                if pr < 0.0 or pc < 0.0 or pr > p - 1 or pc > p - 1:
                    continue
                r0 = min(int(pr), p - 2)
                c0 = min(int(pc), p - 2)
                fr = pr - r0
                fc = pc - c0
                val = (
                    (1 - fr) * ((1 - fc) * psf[r0, c0] + fc * psf[r0, c0 + 1])
                    + fr * ((1 - fc) * psf[r0 + 1, c0] + fc * psf[r0 + 1, c0 + 1])
                )
                out[y, x] += v * val


def superpose_psfs(obj, psf_for_radius, center=None) -> np.ndarray:
    """Brute-force superposition with a caller-supplied canonical PSF per radius.

    ``psf_for_radius(radius_px)`` returns the 2D PSF (patch center at
    ``side // 2``) for a source on the +x axis at that pixel radius.  Every
    nonzero source pixel receives that PSF rotated to its own angle.
    """
    a = _check_square(obj, "object")
    n = a.shape[0]
    cy, cx = ((n - 1) / 2, (n - 1) / 2) if center is None else center
    yy, xx = np.nonzero(a)
    vals = a[yy, xx]
    dy, dx = yy - cy, xx - cx
    radius = np.hypot(dy, dx)
    theta = np.arctan2(dy, dx)
    key = np.round(radius, 9)
    order = np.argsort(key, kind="stable")
    uniq, starts = np.unique(key[order], return_index=True)
    bounds = list(starts) + [order.size]
    out = np.zeros((n, n))
    for u, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
        sel = order[lo:hi]
        psf = np.ascontiguousarray(psf_for_radius(float(radius[sel[0]])), dtype=float)
        if psf.shape[0] < 2:
            raise InvalidArgumentError("PSF patch must be at least 2x2")
        _splat_rotated(
            out,
            psf,
            yy[sel].astype(float),
            xx[sel].astype(float),
            vals[sel],
            theta[sel],
        )
    return out


def superpose_blur(
    obj,
    coeffs: SeidelCoeffs,
    cfg: OpticalConfig,
    *,
    center=None,
    max_size: int = 256,
    allow_large: bool = False,
) -> np.ndarray:
    """True spatially varying blur: every pixel emits its own rotated PSF.

    Images larger than ``max_size`` are refused unless ``allow_large`` is set,
    because the cost grows as ``N^4``.
    """
    a = _check_square(obj, "object")
    n = a.shape[0]
    if n > max_size and not allow_large:
        raise IntractableError(
            f"superpose_blur on a {n}x{n} image costs O(N^4); pass allow_large=True to force it"
        )

    def psf_for_radius(radius_px):
        r = float(normalized_radius(radius_px, cfg))
        if r > 1 + 1e-9:
            raise InvalidArgumentError(
                f"source at {radius_px:.2f}px lies beyond the field radius {cfg.fov_radius_px:.2f}px"
            )
        return psf_at(coeffs, min(r, 1.0), cfg).intensity

    return superpose_psfs(a, psf_for_radius, center)


def _psf_array(psf) -> np.ndarray:
    h = np.asarray(getattr(psf, "intensity", psf), dtype=float)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise InvalidArgumentError(f"PSF must be square, got shape {h.shape}")
    return h


def lsi_convolve(obj, psf: Psf) -> np.ndarray:
    """Linear (zero-padded) convolution with one PSF, cropped to the input size."""
    a = _check_square(obj, "object")
    h = _psf_array(psf)
    n, c = a.shape[0], h.shape[0] // 2
    full = fftconvolve(a, h, mode="full")
    return full[c : c + n, c : c + n]


def lsi_convolve_adjoint(img, psf: Psf) -> np.ndarray:
    a = _check_square(img)
    h = _psf_array(psf)
    n, p = a.shape[0], h.shape[0]
    s = p - 1 - p // 2
    full = fftconvolve(a, h[::-1, ::-1], mode="full")
    return full[s : s + n, s : s + n]
