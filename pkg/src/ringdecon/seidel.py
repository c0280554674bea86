"""Pupil functions and PSFs generated from the five primary Seidel coefficients.

The wavefront (in waves) at normalized pupil coordinates ``(s, t)`` for a point
source at normalized field radius ``r`` on the +x axis is::

    W = sphere (s^2+t^2)^2 + coma (s^2+t^2) s r + astigmatism s^2 r^2
        + field_curvature (s^2+t^2) r^2 + distortion s r^3

The PSF is the squared magnitude of the Fourier transform of the pupil, with
the zero padding chosen so one PSF sample equals one image pixel.

Pupil sample ``k`` (along either axis) sits at ``s = (k - L/2) * 2/L``.  The
aperture keeps ``s^2 + t^2 < 1`` strictly, which makes the sampled aperture
symmetric under ``s -> -s`` and the unaberrated PSF exactly centrosymmetric.
Array axes are ``[t, s]`` for pupils and ``[row, col] = [y, x]`` for PSFs.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .errors import DegeneratePupilError, InvalidArgumentError
from .polar import PolarGrid

__all__ = [
    "SeidelCoeffs",
    "OpticalConfig",
    "Psf",
    "PsfRadialStack",
    "wavefront",
    "wavefront_at",
    "pupil",
    "psf_from_pupil",
    "psf_at",
    "synth_radial_psfs",
    "normalized_radius",
    "second_moment_width",
    "PsfModel",
]

COEFF_NAMES = ("sphere", "coma", "astigmatism", "field_curvature", "distortion")


@dataclass(frozen=True)
class SeidelCoeffs:
    """Primary Seidel coefficients, in waves."""

    sphere: float = 0.0
    coma: float = 0.0
    astigmatism: float = 0.0
    field_curvature: float = 0.0
    distortion: float = 0.0

    def __post_init__(self):
        for name in COEFF_NAMES:
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise InvalidArgumentError(f"Seidel coefficient {name} is not finite: {v}")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in COEFF_NAMES], dtype=float)

    @classmethod
    def from_array(cls, a) -> "SeidelCoeffs":
        a = np.asarray(a, dtype=float).ravel()
        if a.size != 5:
            raise InvalidArgumentError(f"expected 5 coefficients, got {a.size}")
        return cls(*a.tolist())

    @property
    def off_axis_norm(self) -> float:
        """Euclidean norm of (coma, astigmatism, field_curvature, distortion)."""
        return float(np.linalg.norm(self.as_array()[1:]))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in COEFF_NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> "SeidelCoeffs":
        missing = [k for k in COEFF_NAMES if k not in d]
        if missing:
            raise InvalidArgumentError(f"coefficient record is missing keys {missing}")
        return cls(**{k: float(d[k]) for k in COEFF_NAMES})


@dataclass(frozen=True)
class OpticalConfig:
    """Physical and sampling parameters of the pupil -> PSF mapping (SI units).

    ``fov_radius`` is the object-plane radius that maps to normalized field
    radius 1.  The FFT size is ``pupil_samples * oversampling`` where
    ``oversampling = wavelength * d / (2 R pixel_pitch)`` is the number of PSF
    pixels per ``wavelength / (2 NA)``.
    """

    wavelength: float = 0.5e-6
    pupil_radius: float = 1e-3
    pupil_to_image_distance: float = 4e-3
    pupil_samples: int = 64
    psf_side: int = 64
    pixel_pitch: float = 0.5e-6
    fov_radius: float = 32 * 0.5e-6

    def __post_init__(self):
        for name in ("wavelength", "pupil_radius", "pupil_to_image_distance", "pixel_pitch", "fov_radius"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0):
                raise InvalidArgumentError(f"{name} must be positive and finite, got {v}")
            object.__setattr__(self, name, v)
        L, P = int(self.pupil_samples), int(self.psf_side)
        if L != self.pupil_samples or L < 2 or L % 2:
            raise InvalidArgumentError(f"pupil_samples must be a positive even integer, got {self.pupil_samples}")
        if P != self.psf_side or P < 1:
            raise InvalidArgumentError(f"psf_side must be a positive integer, got {self.psf_side}")
        if L < P:
            raise InvalidArgumentError(f"pupil_samples ({L}) must be >= psf_side ({P})")
        object.__setattr__(self, "pupil_samples", L)
        object.__setattr__(self, "psf_side", P)
        if self.oversampling < 1.0:
            raise InvalidArgumentError(
                f"pixel_pitch {self.pixel_pitch:g} undersamples the pupil (oversampling {self.oversampling:.3f} < 1)"
            )

    @property
    def oversampling(self) -> float:
        return self.wavelength * self.pupil_to_image_distance / (2 * self.pupil_radius * self.pixel_pitch)

    @property
    def fft_size(self) -> int:
        return max(int(round(self.pupil_samples * self.oversampling)), self.psf_side)

    @property
    def fov_radius_px(self) -> float:
        return self.fov_radius / self.pixel_pitch

    @classmethod
    def for_image(
        cls,
        n: int,
        *,
        psf_side: int | None = None,
        pupil_samples: int | None = None,
        oversampling: float = 2.0,
        wavelength: float = 0.5e-6,
        numerical_aperture: float = 0.25,
    ) -> "OpticalConfig":
        """Config whose field radius 1 is the half-diagonal of an ``n x n`` image.

        The PSF patch defaults to the image size and the pupil to
        ``max(psf_side, 64)`` samples (rounded up to even).
        """
        psf_side = n if psf_side is None else psf_side
        if pupil_samples is None:
            pupil_samples = max(psf_side, 64)
            pupil_samples += pupil_samples % 2
        R = 1e-3
        d = R / numerical_aperture
        pitch = wavelength * d / (2 * R * oversampling)
        return cls(
            wavelength=wavelength,
            pupil_radius=R,
            pupil_to_image_distance=d,
            pupil_samples=pupil_samples,
            psf_side=psf_side,
            pixel_pitch=pitch,
            fov_radius=(n - 1) / math.sqrt(2) * pitch,
        )

    def replace(self, **changes) -> "OpticalConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OpticalConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidArgumentError(f"unknown optical config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Psf:
    intensity: np.ndarray
    source_radius: float = 0.0

    def __post_init__(self):
        a = np.array(self.intensity, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidArgumentError(f"PSF must be a square 2D array, got {a.shape}")
        if not np.all(np.isfinite(a)) or np.any(a < 0) or a.sum() <= 0:
            raise InvalidArgumentError("PSF must be finite, nonnegative and have positive sum")
        a.setflags(write=False)
        object.__setattr__(self, "intensity", a)

    @property
    def side(self) -> int:
        return self.intensity.shape[0]


@dataclass(frozen=True, eq=False)
class PsfRadialStack:
    psfs: tuple
    grid: PolarGrid = field(repr=False)

    def __post_init__(self):
        psfs = tuple(self.psfs)
        if len(psfs) != self.grid.num_radii:
            raise InvalidArgumentError(
                f"stack has {len(psfs)} PSFs but the grid has {self.grid.num_radii} radii"
            )
        radii = np.array([p.source_radius for p in psfs])
        if np.any(np.diff(radii) <= 0):
            raise InvalidArgumentError("PSF source radii must be strictly increasing")
        object.__setattr__(self, "psfs", psfs)

    def __len__(self):
        return len(self.psfs)

    @property
    def source_radii(self) -> np.ndarray:
        return np.array([p.source_radius for p in self.psfs])

    def array(self) -> np.ndarray:
        return np.stack([p.intensity for p in self.psfs])


def pupil_coords(L: int) -> tuple[np.ndarray, np.ndarray]:
    """``(s, t)`` pupil coordinate arrays of shape ``(L, L)`` indexed ``[t, s]``."""
    v = (np.arange(L) - L // 2) * (2.0 / L)
    t, s = np.meshgrid(v, v, indexing="ij")
    return s, t


def _basis(s, t, r):
    rho2 = s * s + t * t
    return np.stack([rho2 * rho2, rho2 * s * r, s * s * r * r, rho2 * r * r, s * r**3])


def wavefront_at(coeffs: SeidelCoeffs, s, t, r: float):
    """Wavefront in waves at arbitrary pupil coordinates."""
    b = _basis(np.asarray(s, dtype=float), np.asarray(t, dtype=float), float(r))
    return np.tensordot(coeffs.as_array(), b, axes=1)


def _check_r(r):
    if not (math.isfinite(r) and -1e-9 <= r <= 1 + 1e-9):
        raise InvalidArgumentError(f"normalized field radius must lie in [0, 1], got {r}")


def wavefront(coeffs: SeidelCoeffs, r: float, L: int, theta: float = 0.0) -> np.ndarray:
    """Wavefront (waves) on the ``L x L`` pupil grid for a source at ``(r, theta)``."""
    _check_r(r)
    s, t = pupil_coords(L)
    if theta:
        c, sn = math.cos(theta), math.sin(theta)
        s, t = c * s + sn * t, -sn * s + c * t
    return wavefront_at(coeffs, s, t, r)


def aperture(L: int) -> np.ndarray:
    s, t = pupil_coords(L)
    return (s * s + t * t < 1.0).astype(float)


def pupil(coeffs: SeidelCoeffs, r: float, cfg: OpticalConfig, theta: float = 0.0) -> np.ndarray:
    """Generalized pupil: unit amplitude inside the aperture, phase ``2 pi W``."""
    L = cfg.pupil_samples
    return aperture(L) * np.exp(2j * np.pi * wavefront(coeffs, r, L, theta))


def _shift_phase(L: int, Q: int, shift) -> np.ndarray:
    """Linear pupil phase moving the PSF by ``shift = (drow, dcol)`` pixels."""
    u = np.arange(L) - L // 2
    return np.exp(2j * np.pi * (u[:, None] * shift[0] + u[None, :] * shift[1]) / Q)


def _field(p: np.ndarray, Q: int) -> np.ndarray:
    """Complex PSF amplitude on the ``Q x Q`` grid, PSF center at index ``Q // 2``."""
    L = p.shape[0]
    buf = np.zeros((Q, Q), dtype=complex)
    o = Q // 2 - L // 2
    buf[o : o + L, o : o + L] = p
    return sfft.fftshift(sfft.fft2(sfft.ifftshift(buf)))


def _crop(a: np.ndarray, side: int) -> np.ndarray:
    Q = a.shape[0]
    o = Q // 2 - side // 2
    return a[o : o + side, o : o + side]


def psf_from_pupil(p: np.ndarray, cfg: OpticalConfig, source_radius: float = 0.0) -> Psf:
    p = np.asarray(p)
    if p.shape != (cfg.pupil_samples, cfg.pupil_samples):
        raise InvalidArgumentError(f"pupil shape {p.shape} does not match config L={cfg.pupil_samples}")
    if not np.all(np.isfinite(p)):
        raise InvalidArgumentError("pupil contains non-finite values")
    if not np.any(p):
        raise DegeneratePupilError("pupil is identically zero")
    E = _field(p, cfg.fft_size)
    inten = _crop(E.real**2 + E.imag**2, cfg.psf_side)
    total = inten.sum()
    if not total > 0:
        raise DegeneratePupilError("PSF has no energy inside the crop window")
    return Psf(inten / total, source_radius)


def psf_at(
    coeffs: SeidelCoeffs, r: float, cfg: OpticalConfig, theta: float = 0.0, shift=(0.0, 0.0)
) -> Psf:
    """PSF of a source at normalized radius ``r`` and angle ``theta``.

    ``theta != 0`` rotates the pupil coordinates, which rotates the PSF
    exactly about its patch center; ``shift`` moves it by sub-pixel amounts.
    """
    p = pupil(coeffs, r, cfg, theta)
    if shift[0] or shift[1]:
        p = p * _shift_phase(cfg.pupil_samples, cfg.fft_size, shift)
    return psf_from_pupil(p, cfg, source_radius=r)


def normalized_radius(radius_px, cfg: OpticalConfig):
    return np.asarray(radius_px, dtype=float) / cfg.fov_radius_px


def synth_radial_psfs(coeffs: SeidelCoeffs, grid: PolarGrid, cfg: OpticalConfig) -> PsfRadialStack:
    """One PSF per grid radius, for sources on the +x field axis."""
    rn = normalized_radius(grid.radii, cfg)
    if rn[-1] > 1 + 1e-9:
        raise InvalidArgumentError(
            f"grid max radius {grid.max_radius:g}px exceeds the field radius "
            f"{cfg.fov_radius_px:g}px of the optical config"
        )
    rn = np.minimum(rn, 1.0)
    if not coeffs.as_array()[1:].any():
        base = psf_at(coeffs, 0.0, cfg).intensity
        psfs = [Psf(base, float(r)) for r in rn]
    else:
        psfs = [psf_at(coeffs, float(r), cfg) for r in rn]
    return PsfRadialStack(tuple(psfs), grid)


def second_moment_width(psf) -> float:
    """RMS radius of an intensity pattern about its centroid (pixels)."""
    a = np.asarray(getattr(psf, "intensity", psf), dtype=float)
    a = a / a.sum()
    yy, xx = np.mgrid[0 : a.shape[0], 0 : a.shape[1]]
    cy, cx = (a * yy).sum(), (a * xx).sum()
    return float(np.sqrt((a * ((yy - cy) ** 2 + (xx - cx) ** 2)).sum()))


class PsfModel:
    """Differentiable map from Seidel coefficients to a cropped, unit-sum PSF.

    One instance is bound to a source at ``(r, theta)`` with sub-pixel
    ``shift``; :meth:`vjp` back-propagates a gradient with respect to the PSF
    into a gradient with respect to the five coefficients.
    """

    def __init__(self, cfg: OpticalConfig, r: float, theta: float = 0.0, shift=(0.0, 0.0)):
        _check_r(r)
        self.cfg = cfg
        L = cfg.pupil_samples
        s, t = pupil_coords(L)
        c, sn = math.cos(theta), math.sin(theta)
        s, t = c * s + sn * t, -sn * s + c * t
        self.basis = 2 * np.pi * _basis(s, t, float(r))
        self.amp = aperture(L).astype(complex)
        if shift[0] or shift[1]:
            self.amp = self.amp * _shift_phase(L, cfg.fft_size, shift)

    def forward(self, w):
        phase = np.tensordot(np.asarray(w, dtype=float), self.basis, axes=1)
        p = self.amp * np.exp(1j * phase)
        E = _field(p, self.cfg.fft_size)
        crop = _crop(E.real**2 + E.imag**2, self.cfg.psf_side)
        total = crop.sum()
        return crop / total, (p, E, crop, total)

    def vjp(self, cache, g_psf):
        """Gradient of a scalar loss w.r.t. coefficients given dloss/dpsf."""
        p, E, crop, total = cache
        Q, P, L = self.cfg.fft_size, self.cfg.psf_side, self.cfg.pupil_samples
        n = crop / total
        g_crop = (g_psf - np.sum(g_psf * n)) / total
        G = np.zeros((Q, Q))
        o = Q // 2 - P // 2
        G[o : o + P, o : o + P] = g_crop
        # dloss/dE* pulled back through fftshift . fft2 . ifftshift: its
        # transpose is the same composition because the DFT matrix is symmetric.
        back = sfft.fftshift(sfft.fft2(sfft.ifftshift(G * np.conj(E))))
        ob = Q // 2 - L // 2
        back = back[ob : ob + L, ob : ob + L]
        g_phase = -2.0 * np.imag(p * back)
        return np.tensordot(self.basis, g_phase, axes=([1, 2], [0, 1]))
