"""Deblurring: ring deconvolution, LSI baselines, Seidel and blind deconvolution.

The iterative solvers minimize ``||A x - f||^2 + tv_weight * TV(x)`` with
anisotropic total variation, using Adam (or plain gradient descent) and an
optional projection onto ``x >= 0``.  The returned image is the iterate with
the lowest objective seen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.fft as sfft

from .errors import DivergenceError, InvalidArgumentError, UninformativeInputError
from .forward import (
    RingSpectrumStack,
    lsi_convolve,
    lsi_convolve_adjoint,
    ring_convolve,
    ring_convolve_adjoint,
)
from .optim import Adam
from .polar import PolarGrid
from .seidel import OpticalConfig, Psf, SeidelCoeffs, psf_from_pupil, pupil

__all__ = [
    "SolverSettings",
    "DeblurResult",
    "METHODS",
    "ring_convolve_adjoint",
    "tv_norm",
    "tv_subgradient",
    "least_squares_objective",
    "iterative_least_squares",
    "ring_deconvolve",
    "deconvolve",
    "seidel_deconvolve",
    "center_psf",
    "sharpness",
    "blind_deconvolve",
    "psnr",
]

METHODS = ("ring", "wiener", "richardson_lucy", "iterative_ls")


@dataclass(frozen=True)
class SolverSettings:
    """Iteration and regularization parameters shared by all solvers.

    ``wiener_reg`` is the constant added to ``|H|^2`` by the Wiener filter.
    ``optimizer`` is ``"adam"`` or ``"gd"`` (fixed-step gradient descent).
    """

    max_iters: int = 200
    step: float = 0.05
    tv_weight: float = 0.0
    stop_tol: float = 1e-6
    nonneg: bool = True
    seed: int = 0
    optimizer: str = "adam"
    wiener_reg: float = 1e-2

    def __post_init__(self):
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise InvalidArgumentError(f"max_iters must be a positive integer, got {self.max_iters}")
        if not (math.isfinite(self.step) and self.step > 0):
            raise InvalidArgumentError(f"step must be positive, got {self.step}")
        if not (math.isfinite(self.tv_weight) and self.tv_weight >= 0):
            raise InvalidArgumentError(f"tv_weight must be >= 0, got {self.tv_weight}")
        if not self.stop_tol >= 0:
            raise InvalidArgumentError(f"stop_tol must be >= 0, got {self.stop_tol}")
        if self.optimizer not in ("adam", "gd"):
            raise InvalidArgumentError(f"optimizer must be 'adam' or 'gd', got {self.optimizer!r}")

    def replace(self, **changes) -> "SolverSettings":
        return SolverSettings(**{**self.to_dict(), **changes})

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "SolverSettings":
        names = set(cls.__dataclass_fields__)
        unknown = set(d) - names
        if unknown:
            raise InvalidArgumentError(f"unknown solver settings keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class DeblurResult:
    image: np.ndarray
    loss_trace: list = field(default_factory=list)
    iterations_run: int = 0
    method_tag: str = ""
    converged: bool = True


def _image(img, name="image") -> np.ndarray:
    a = np.asarray(img, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidArgumentError(f"{name} must be a square 2D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return a


def tv_norm(x: np.ndarray) -> float:
    """Anisotropic total variation: sum of absolute forward differences."""
    return float(np.abs(np.diff(x, axis=0)).sum() + np.abs(np.diff(x, axis=1)).sum())


def tv_subgradient(x: np.ndarray) -> np.ndarray:
    """Subgradient of :func:`tv_norm`, taking 0 where neighbours are equal."""
    g = np.zeros_like(x)
    sy = np.sign(np.diff(x, axis=0))
    sx = np.sign(np.diff(x, axis=1))
    g[:-1, :] -= sy
    g[1:, :] += sy
    g[:, :-1] -= sx
    g[:, 1:] += sx
    return g


def least_squares_objective(x, f, forward: Callable, adjoint: Callable, tv_weight: float = 0.0):
    """Objective ``||A x - f||^2 + tv_weight TV(x)`` and its (sub)gradient."""
    # overflow surfaces as a non-finite loss, which the callers turn into DivergenceError
    with np.errstate(over="ignore", invalid="ignore"):
        r = forward(x) - f
        loss = float(np.sum(r * r))
        grad = 2.0 * adjoint(r)
        if tv_weight:
            loss += tv_weight * tv_norm(x)
            grad = grad + tv_weight * tv_subgradient(x)
    return loss, grad


def iterative_least_squares(
    f: np.ndarray,
    forward: Callable,
    adjoint: Callable,
    s: SolverSettings,
    method_tag: str,
    x0: np.ndarray | None = None,
) -> DeblurResult:
    """First-order minimization of the regularized least-squares objective.

    Raises
    ------
    DivergenceError
        The objective became non-finite; the trace so far is attached.
    """
    x = np.array(f if x0 is None else x0, dtype=float)
    if s.nonneg:
        np.maximum(x, 0.0, out=x)
    adam = Adam(x.shape) if s.optimizer == "adam" else None
    trace: list[float] = []
    best_loss, best_x = math.inf, x.copy()
    converged = False
    it = 0
    for it in range(1, s.max_iters + 1):
        loss, grad = least_squares_objective(x, f, forward, adjoint, s.tv_weight)
        trace.append(loss)
        if not math.isfinite(loss):
            raise DivergenceError(f"{method_tag}: objective became non-finite at iteration {it}", trace)
        if loss < best_loss:
            best_loss, best_x = loss, x.copy()
        if len(trace) > 1 and abs(trace[-2] - loss) <= s.stop_tol * abs(trace[-2]):
            converged = True
            break
        x = x + (adam.step(grad, s.step) if adam is not None else -s.step * grad)
        if s.nonneg:
            np.maximum(x, 0.0, out=x)
    return DeblurResult(best_x, trace, it, method_tag, converged)


def ring_deconvolve(
    img, spectra: RingSpectrumStack, grid: PolarGrid | None = None, s: SolverSettings = SolverSettings()
) -> DeblurResult:
    """Invert the ring-convolution forward model by regularized least squares."""
    f = _image(img)
    grid = spectra.grid if grid is None else grid
    return iterative_least_squares(
        f,
        lambda x: ring_convolve(x, spectra, grid),
        lambda y: ring_convolve_adjoint(y, spectra, grid),
        s,
        "ring",
    )


def _otf(h: np.ndarray, shape) -> np.ndarray:
    """Transfer function of ``h`` (center at ``side // 2``) on a periodic grid."""
    buf = np.zeros(shape)
    p = h.shape[0]
    if p > shape[0]:
        raise InvalidArgumentError(f"PSF side {p} exceeds the padded image side {shape[0]}")
    buf[:p, :p] = h
    buf = np.roll(buf, (-(p // 2), -(p // 2)), axis=(0, 1))
    return sfft.rfft2(buf)


def _wiener(f: np.ndarray, h: np.ndarray, reg: float) -> np.ndarray:
    if not reg > 0:
        raise InvalidArgumentError(f"Wiener regularization must be > 0, got {reg}")
    n, p = f.shape[0], h.shape[0]
    pad = p // 2 + 1
    fp = np.pad(f, pad, mode="edge")
    H = _otf(h, fp.shape)
    out = sfft.irfft2(sfft.rfft2(fp) * np.conj(H) / (np.abs(H) ** 2 + reg), s=fp.shape)
    return out[pad : pad + n, pad : pad + n]


def _richardson_lucy(f: np.ndarray, h: np.ndarray, s: SolverSettings) -> DeblurResult:
    """Multiplicative updates with periodic convolution, which conserve flux exactly."""
    # FFT convolution leaves round-off negatives in otherwise nonnegative data
    if np.any(f < -1e-9 * np.abs(f).max()):
        raise InvalidArgumentError("Richardson-Lucy needs a nonnegative image")
    f = np.maximum(f, 0.0)
    H = _otf(h, f.shape)
    conv = lambda a, T: sfft.irfft2(sfft.rfft2(a) * T, s=f.shape)  # noqa: E731
    x = np.full_like(f, f.mean()) if f.sum() > 0 else f.copy()
    trace = []
    tiny = 1e-12 * max(f.max(), 1e-300)
    it = 0
    converged = False
    for it in range(1, s.max_iters + 1):
        est = conv(x, H)
        ratio = f / np.maximum(est, tiny)
        x = np.maximum(x * conv(ratio, np.conj(H)), 0.0)
        r = est - f
        trace.append(float(np.sum(r * r)))
        if not math.isfinite(trace[-1]):
            raise DivergenceError(f"richardson_lucy: non-finite residual at iteration {it}", trace)
        if len(trace) > 1 and abs(trace[-2] - trace[-1]) <= s.stop_tol * abs(trace[-2]):
            converged = True
            break
    return DeblurResult(x, trace, it, "richardson_lucy", converged)


def deconvolve(img, psf, method: str = "wiener", s: SolverSettings = SolverSettings()) -> DeblurResult:
    """Shift-invariant deconvolution with a single PSF.

    Parameters
    ----------
    method : {"wiener", "richardson_lucy", "iterative_ls"}
        ``wiener`` is one pass of ``H* / (|H|^2 + s.wiener_reg)`` on an
        edge-padded image.  ``richardson_lucy`` runs ``s.max_iters``
        multiplicative updates.  ``iterative_ls`` solves the same objective as
        :func:`ring_deconvolve` with :func:`lsi_convolve` as forward model.
    """
    f = _image(img)
    h = np.asarray(getattr(psf, "intensity", psf), dtype=float)
    if h.ndim != 2 or h.shape[0] != h.shape[1] or not np.all(np.isfinite(h)):
        raise InvalidArgumentError("PSF must be a finite square 2D array")
    if method == "wiener":
        x = _wiener(f, h, s.wiener_reg)
        if s.nonneg:
            x = np.maximum(x, 0.0)
        return DeblurResult(x, [], 1, "wiener", True)
    if method == "richardson_lucy":
        return _richardson_lucy(f, h, s)
    if method == "iterative_ls":
        return iterative_least_squares(
            f, lambda x: lsi_convolve(x, h), lambda y: lsi_convolve_adjoint(y, h), s, "iterative_ls"
        )
    raise InvalidArgumentError(f"unknown method {method!r}; expected wiener, richardson_lucy or iterative_ls")


def center_psf(coeffs: SeidelCoeffs, cfg: OpticalConfig) -> Psf:
    """On-axis PSF; only the sphere coefficient contributes at zero field radius."""
    return psf_from_pupil(pupil(coeffs, 0.0, cfg), cfg, source_radius=0.0)


def seidel_deconvolve(
    img, coeffs: SeidelCoeffs, cfg: OpticalConfig, s: SolverSettings = SolverSettings(), method: str = "wiener"
) -> DeblurResult:
    """Deconvolve with the synthetic center PSF instead of a measured one."""
    return deconvolve(img, center_psf(coeffs, cfg), method, s)


def _crop(a: np.ndarray, crop: int) -> np.ndarray:
    if crop <= 0:
        return a
    if 2 * crop >= min(a.shape):
        raise InvalidArgumentError(f"crop {crop} leaves nothing of a {a.shape} image")
    return a[crop:-crop, crop:-crop]


def sharpness(img, crop: int = 10) -> float:
    """Sum of forward-difference gradient magnitudes, normalized by total intensity."""
    a = _crop(np.asarray(img, dtype=float), crop)
    gy = np.diff(a, axis=0)[:, :-1]
    gx = np.diff(a, axis=1)[:-1, :]
    total = np.abs(a).sum()
    return float(np.hypot(gy, gx).sum() / total) if total > 0 else 0.0


def _golden_max(fun, lo, hi, tol):
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return (c, fc) if fc >= fd else (d, fd)


def _least_within(fun, lo, hi, level, tol):
    """Smallest ``w`` in ``[lo, hi]`` with ``fun(w) >= level``, by bisection."""
    if fun(lo) >= level:
        return lo
    a, b = lo, hi
    while b - a > tol:
        m = 0.5 * (a + b)
        if fun(m) >= level:
            b = m
        else:
            a = m
    return b


def blind_deconvolve(
    img,
    cfg: OpticalConfig,
    s: SolverSettings = SolverSettings(),
    *,
    bounds: tuple[float, float] = (0.0, 3.0),
    grid_points: int = 13,
    tol: float = 1e-3,
    crop: int = 10,
    method: str = "wiener",
    slack: float = 0.03,
) -> tuple[float, DeblurResult]:
    """Estimate the sphere coefficient that makes the deconvolved image sharpest.

    A coarse scan over ``bounds`` brackets the best value, golden-section search
    refines it, and a finite-difference ascent polishes the result.  Sharpness
    is the normalized gradient-magnitude sum of the deconvolved image after
    cropping ``crop`` pixels per side.

    Over-deconvolution keeps adding ringing, so sharpness is nearly flat past
    the true value.  The returned estimate is therefore the smallest
    coefficient whose sharpness is within a fraction ``slack`` of the maximum,
    found by bisection below the maximizer.  ``slack=0`` returns the maximizer.

    Raises
    ------
    UninformativeInputError
        The input has no spatial gradient at all.
    DivergenceError
        The sharpness became non-finite.
    """
    f = _image(img)
    if not (np.any(np.diff(f, axis=0)) or np.any(np.diff(f, axis=1))):
        raise UninformativeInputError("image is flat; blind deblurring has nothing to measure")
    lo, hi = bounds
    if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
        raise InvalidArgumentError(f"invalid sphere search bounds {bounds}")
    if not 0 <= slack < 1:
        raise InvalidArgumentError(f"slack must lie in [0, 1), got {slack}")
    cache: dict[float, float] = {}

    def score(w):
        w = float(min(max(w, lo), hi))
        if w not in cache:
            res = seidel_deconvolve(f, SeidelCoeffs(sphere=w), cfg, s, method)
            val = sharpness(res.image, crop)
            if not math.isfinite(val):
                raise DivergenceError(f"sharpness is non-finite at sphere={w:g}", list(cache.values()))
            cache[w] = val
        return cache[w]

    pts = np.linspace(lo, hi, max(grid_points, 3))
    vals = [score(w) for w in pts]
    k = int(np.argmax(vals))
    a, b = pts[max(k - 1, 0)], pts[min(k + 1, len(pts) - 1)]
    w, _ = _golden_max(score, a, b, tol)
    h = max(tol, 1e-4)
    step = 4 * h
    for _ in range(20):
        g = (score(w + h) - score(w - h)) / (2 * h)
        cand = min(max(w + step * math.copysign(1.0, g), lo), hi) if g else w
        if score(cand) > score(w):
            w = cand
        else:
            step /= 2
            if step < h:
                break
    w = _least_within(score, lo, w, (1.0 - slack) * score(w), tol) if slack > 0 else w
    res = seidel_deconvolve(f, SeidelCoeffs(sphere=w), cfg, s, method)
    res.loss_trace = [-score(x) for x in cache]
    return float(w), res


def psnr(reference, estimate, crop: int = 10, data_range: float | None = None) -> float:
    """Peak signal-to-noise ratio in dB after cropping ``crop`` pixels per side.

    ``data_range`` defaults to the peak-to-peak range of the cropped reference.
    """
    ref = _crop(np.asarray(reference, dtype=float), crop)
    est = _crop(np.asarray(estimate, dtype=float), crop)
    if ref.shape != est.shape:
        raise InvalidArgumentError(f"shape mismatch {ref.shape} vs {est.shape}")
    rng = float(np.ptp(ref)) if data_range is None else float(data_range)
    mse = float(np.mean((ref - est) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(rng * rng / mse)
