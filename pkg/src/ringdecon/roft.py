"""Rotational Fourier transform (RoFT) and filtering diagnostics of LRI systems.

The RoFT of an image is the Fourier series over angle of each polar ring,
taken with the positive exponent::

    F(r, xi) = sum_theta f(r, theta) exp(+2 pi i theta xi / M)

This is the complex conjugate of the usual (negative-exponent) FFT of a real
ring.  Frequencies are stored in FFT order: ``xi = 0, 1, ..., M/2, -M/2+1,
..., -1``.

In RoFT space a rotationally symmetric system acts independently on each
angular frequency: output ring ``rho_i`` at frequency ``xi`` is a weighted sum
over source rings ``r_j`` of the object spectrum times the PSF spectrum
(:func:`lri_filter_spectrum`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .errors import DegeneratePsfError, InvalidArgumentError
from .forward import RingSpectrumStack, _weights, precompute_ring_spectra, source_density_matrix
from .polar import PolarGrid, PolarImage, from_polar, to_polar
from .seidel import PsfRadialStack

__all__ = [
    "RoftImage",
    "PsfSpectralMetrics",
    "roft",
    "roft_polar",
    "source_roft",
    "inverse_roft",
    "inverse_roft_polar",
    "lri_filter_spectrum",
    "psf_metrics",
    "angular_frequencies",
]


@dataclass(frozen=True, eq=False)
class RoftImage:
    """``spectrum[j, xi]``: RoFT of polar ring ``j`` at angular frequency index ``xi``."""

    spectrum: np.ndarray
    grid: PolarGrid = field(repr=False)

    def __post_init__(self):
        a = np.array(self.spectrum, dtype=complex)
        k, m = self.grid.num_radii, self.grid.num_angles
        if a.shape != (k, m):
            raise InvalidArgumentError(f"spectrum shape {a.shape} does not match grid ({k}, {m})")
        if not np.all(np.isfinite(a)):
            raise InvalidArgumentError("spectrum contains non-finite values")
        a.setflags(write=False)
        object.__setattr__(self, "spectrum", a)


@dataclass(frozen=True)
class PsfSpectralMetrics:
    """Spectral footprint of the PSF for one source radius (pixels).

    ``bandwidth`` is in angular-frequency indices (cycles per turn) and
    ``mix_width`` in output rings.
    """

    radius: float
    bandwidth: float
    mix_width: float


def angular_frequencies(m: int) -> np.ndarray:
    """Signed angular frequency of each spectrum column."""
    return sfft.fftfreq(m, 1.0 / m)


def _hermitian_from_real(rings: np.ndarray) -> np.ndarray:
    """Positive-exponent DFT of real rows, exactly conjugate symmetric."""
    m = rings.shape[-1]
    half = np.conj(sfft.rfft(rings, axis=-1))
    if m % 2 == 0:
        half[..., -1] = half[..., -1].real
    half[..., 0] = half[..., 0].real
    neg = np.conj(half[..., 1 : (m + 1) // 2][..., ::-1])
    return np.concatenate([half, neg], axis=-1)


def roft_polar(pimg: PolarImage) -> RoftImage:
    return RoftImage(_hermitian_from_real(pimg.samples.T), pimg.grid)


def roft(img, grid: PolarGrid) -> RoftImage:
    """RoFT of an image sampled bilinearly onto ``grid``."""
    return roft_polar(to_polar(img, grid))


def source_roft(obj, grid: PolarGrid) -> RoftImage:
    """RoFT of the polar source densities that :func:`ring_convolve` uses."""
    a = np.asarray(obj, dtype=float)
    g = (source_density_matrix(grid, a.shape[0]) @ a.ravel()).reshape(grid.shape)
    return roft_polar(PolarImage(g, grid))


def inverse_roft_polar(spec: RoftImage) -> PolarImage:
    """Inverse RoFT on the polar grid; the imaginary part is discarded."""
    m = spec.grid.num_angles
    rings = sfft.fft(spec.spectrum, axis=-1).real / m
    return PolarImage(rings.T, spec.grid)


def inverse_roft(spec: RoftImage, n: int) -> np.ndarray:
    return from_polar(inverse_roft_polar(spec), n)


def lri_filter_spectrum(obj_spec: RoftImage, spectra: RingSpectrumStack) -> RoftImage:
    """Apply an LRI system in RoFT space.

    ``out[i, xi] = sum_j w_j dtheta obj[j, xi] H[j, i, xi]`` where ``w_j`` is the
    radial quadrature weight and ``H`` the positive-exponent PSF spectrum.  The
    angular step ``dtheta`` converts the discrete angular sum into the
    integral, matching :func:`~ringdecon.forward.ring_convolve_polar`.
    """
    if obj_spec.grid.shape != spectra.grid.shape:
        raise InvalidArgumentError(
            f"object grid {obj_spec.grid.shape} does not match spectra grid {spectra.grid.shape}"
        )
    h = np.conj(spectra.full())
    g = obj_spec.spectrum * _weights(spectra.grid)[:, None]
    return RoftImage(np.einsum("jx,jix->ix", g, h, optimize=True), obj_spec.grid)


def _support_width(energy: np.ndarray, frac: float) -> int:
    """Length of the shortest contiguous run holding ``frac`` of the energy."""
    total = energy.sum()
    c = np.concatenate([[0.0], np.cumsum(energy)])
    target = frac * total
    best = energy.size
    lo = 0
    for hi in range(1, energy.size + 1):
        while c[hi] - c[lo + 1] >= target - 1e-15 * total and lo + 1 < hi:
            lo += 1
        if c[hi] - c[lo] >= target - 1e-15 * total:
            best = min(best, hi - lo)
    return best


def psf_metrics(
    stack: PsfRadialStack,
    grid: PolarGrid,
    *,
    spectra: RingSpectrumStack | None = None,
    energy_fraction: float = 0.99,
) -> list[PsfSpectralMetrics]:
    """Angular bandwidth and radial mix width of every PSF in ``stack``.

    The bandwidth is the smallest ``B`` such that frequencies ``|xi| <= B`` of
    the PSF's RoFT on its own ring ``rho = r`` hold ``energy_fraction`` of
    that ring's energy.  The mix width is the number of output rings in the
    shortest contiguous band holding ``energy_fraction`` of the full RoFT
    energy.
    """
    if not 0 < energy_fraction <= 1:
        raise InvalidArgumentError("energy_fraction must lie in (0, 1]")
    spectra = precompute_ring_spectra(stack, grid) if spectra is None else spectra
    full = spectra.full()
    m = grid.num_angles
    absxi = np.abs(angular_frequencies(m))
    order = np.argsort(absxi, kind="stable")
    out = []
    for j in range(grid.num_radii):
        e = np.abs(full[j]) ** 2
        total = e.sum()
        if not total > 0:
            raise DegeneratePsfError(f"PSF for radius {grid.radii[j]:.2f}px has no energy on the polar grid")
        ring = e[j]
        if ring.sum() > 0:
            cum = np.cumsum(ring[order]) / ring.sum()
            idx = int(np.searchsorted(cum, energy_fraction - 1e-12))
            bw = float(absxi[order][min(idx, m - 1)])
        else:
            bw = 0.0
        mix = float(_support_width(e.sum(axis=1), energy_fraction))
        out.append(PsfSpectralMetrics(float(grid.radii[j]), bw, mix))
    return out
