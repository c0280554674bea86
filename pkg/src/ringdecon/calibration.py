"""Single-image Seidel calibration: find point sources and fit the five coefficients.

The fit compares each measured patch with the synthetic PSF for the same field
position.  The synthetic PSF is rotated to the source angle through its pupil
coordinates and shifted by the sub-pixel source offset through a linear pupil
phase, so the measured data are never interpolated.

Intensity-only data cannot tell ``W(s, t)`` from ``-W(-s, -t)``: flipping the
signs of sphere, astigmatism and field curvature together yields the same PSF.
Fitted coefficients are reported with ``sphere + astigmatism + field_curvature
>= 0``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import least_squares
from scipy.stats import qmc

from .errors import (
    DegeneratePatchError,
    EmptyCalibrationError,
    InvalidArgumentError,
    NonConvergenceError,
)
from .noise import add_gaussian_noise
from .optim import Adam, cosine_lr
from .seidel import COEFF_NAMES, OpticalConfig, PsfModel, SeidelCoeffs, psf_at

__all__ = [
    "SourcePatch",
    "DetectionConfig",
    "FitSettings",
    "FitReport",
    "detect_sources",
    "normalize_patch",
    "fit_seidel",
    "patch_loss",
    "synthetic_source_patch",
    "canonical_gauge",
]

_EVEN_TERMS = np.array([0, 2, 3])


def _pixel_of(center) -> tuple[int, int]:
    return int(math.floor(center[0] + 0.5)), int(math.floor(center[1] + 0.5))


@dataclass(frozen=True, eq=False)
class SourcePatch:
    """A background-subtracted ``P x P`` cut-out around one point source.

    ``center`` is the sub-pixel source location in image ``(row, col)``
    coordinates; the patch is centered on the nearest pixel to it.
    """

    patch: np.ndarray
    center: tuple[float, float]
    field_radius: float
    field_angle: float

    def __post_init__(self):
        a = np.array(self.patch, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] % 2 == 0:
            raise InvalidArgumentError(f"patch must be square with odd side, got shape {a.shape}")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise InvalidArgumentError("patch must be finite and nonnegative")
        r = float(self.field_radius)
        if not (-1e-9 <= r <= 1 + 1e-9):
            raise InvalidArgumentError(f"field radius must lie in [0, 1], got {r}")
        a.setflags(write=False)
        object.__setattr__(self, "patch", a)
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "field_radius", min(max(r, 0.0), 1.0))
        object.__setattr__(self, "field_angle", float(self.field_angle))

    @property
    def side(self) -> int:
        return self.patch.shape[0]

    @property
    def offset(self) -> tuple[float, float]:
        """Sub-pixel displacement of the source from the patch's central pixel."""
        pr, pc = _pixel_of(self.center)
        return (self.center[0] - pr, self.center[1] - pc)


@dataclass(frozen=True)
class DetectionConfig:
    """Thresholds for :func:`detect_sources`.

    ``threshold`` is relative to the brightest smoothed peak.  ``center`` and
    ``fov_radius_px`` default to the image center and half-diagonal.
    """

    threshold: float = 0.2
    min_separation: float = 8.0
    patch_size: int = 65
    centroid_radius: int = 2
    smooth_sigma: float = 1.0
    center: tuple[float, float] | None = None
    fov_radius_px: float | None = None

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise InvalidArgumentError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise InvalidArgumentError(f"patch_size must be a positive odd integer, got {self.patch_size}")
        if self.min_separation < 0 or self.centroid_radius < 0 or self.smooth_sigma < 0:
            raise InvalidArgumentError("min_separation, centroid_radius and smooth_sigma must be >= 0")
        if self.fov_radius_px is not None and not self.fov_radius_px > 0:
            raise InvalidArgumentError("fov_radius_px must be positive")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["center"] = None if self.center is None else list(self.center)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionConfig":
        d = dict(d)
        if d.get("center") is not None:
            d["center"] = tuple(d["center"])
        return cls(**d)


def _cut(img: np.ndarray, pixel: tuple[int, int], side: int) -> np.ndarray:
    h = side // 2
    out = np.zeros((side, side))
    r0, c0 = pixel[0] - h, pixel[1] - h
    rs, cs = max(r0, 0), max(c0, 0)
    re, ce = min(r0 + side, img.shape[0]), min(c0 + side, img.shape[1])
    if rs < re and cs < ce:
        out[rs - r0 : re - r0, cs - c0 : ce - c0] = img[rs:re, cs:ce]
    return out


def detect_sources(calib, cfg: DetectionConfig = DetectionConfig()) -> list[SourcePatch]:
    """Locate point sources and cut background-subtracted patches around them.

    Peaks closer than ``cfg.min_separation`` to a brighter peak are dropped and
    counted in a :class:`UserWarning`.
    """
    a = np.asarray(calib, dtype=float)
    if a.ndim != 2 or not np.all(np.isfinite(a)):
        raise InvalidArgumentError("calibration image must be a finite 2D array")
    d = a - np.median(a)
    s = ndimage.gaussian_filter(d, cfg.smooth_sigma) if cfg.smooth_sigma > 0 else d
    peak = s.max()
    if not peak > 0:
        raise EmptyCalibrationError("no source rises above the image background")
    is_max = (s == ndimage.maximum_filter(s, size=3, mode="nearest")) & (s > cfg.threshold * peak)
    rows, cols = np.nonzero(is_max)
    order = np.argsort(-s[rows, cols], kind="stable")
    kept: list[tuple[int, int]] = []
    dropped = 0
    for k in order:
        p = (int(rows[k]), int(cols[k]))
        if any(math.hypot(p[0] - q[0], p[1] - q[1]) < cfg.min_separation for q in kept):
            dropped += 1
            continue
        kept.append(p)
    if dropped:
        warnings.warn(f"dropped {dropped} detection(s) closer than {cfg.min_separation} px to a brighter source")

    h, w = a.shape
    cy, cx = ((h - 1) / 2, (w - 1) / 2) if cfg.center is None else cfg.center
    fov = math.hypot((h - 1) / 2, (w - 1) / 2) if cfg.fov_radius_px is None else cfg.fov_radius_px
    pos = np.clip(d, 0.0, None)
    cr = cfg.centroid_radius
    out = []
    for pr, pc in kept:
        win = _cut(pos, (pr, pc), 2 * cr + 1)
        tot = win.sum()
        if tot > 0:
            off = np.arange(-cr, cr + 1)
            center = (pr + (win.sum(1) @ off) / tot, pc + (win.sum(0) @ off) / tot)
        else:
            center = (float(pr), float(pc))
        dy, dx = center[0] - cy, center[1] - cx
        out.append(
            SourcePatch(
                _cut(pos, _pixel_of(center), cfg.patch_size),
                center,
                min(math.hypot(dy, dx) / fov, 1.0),
                math.atan2(dy, dx),
            )
        )
    if not out:
        raise EmptyCalibrationError("no source passed the detection threshold")
    return out


def normalize_patch(patch, noise_threshold: float = 0.0) -> np.ndarray:
    """Subtract the median background, clamp negatives, scale to unit sum.

    With ``noise_threshold > 0``, values below that many robust standard
    deviations (from the median absolute deviation) are also zeroed.
    """
    a = np.asarray(patch, dtype=float)
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError("patch contains non-finite values")
    d = a - np.median(a)
    if noise_threshold > 0:
        sigma = 1.4826 * np.median(np.abs(d))
        d[d < noise_threshold * sigma] = 0.0
    d = np.clip(d, 0.0, None)
    total = d.sum()
    if not total > 0:
        raise DegeneratePatchError("patch is empty after background subtraction")
    return d / total


def synthetic_source_patch(
    coeffs: SeidelCoeffs,
    cfg: OpticalConfig,
    radius: float,
    angle: float,
    *,
    center=None,
    fov_radius_px: float | None = None,
    snr_db: float | None = None,
    rng: np.random.Generator | None = None,
) -> SourcePatch:
    """Render the patch a calibration image would contain for one source.

    ``radius`` is normalized; the source sits at ``center + radius *
    fov_radius_px * (sin angle, cos angle)`` in ``(row, col)``.  Optional
    Gaussian noise at ``snr_db`` (relative to the patch) is followed by the
    median background subtraction and clamping that detection applies.
    """
    fov = cfg.fov_radius_px if fov_radius_px is None else fov_radius_px
    cy, cx = (0.0, 0.0) if center is None else center
    pos = (cy + radius * fov * math.sin(angle), cx + radius * fov * math.cos(angle))
    pix = _pixel_of(pos)
    shift = (pos[0] - pix[0], pos[1] - pix[1])
    img = psf_at(coeffs, radius, cfg, angle, shift).intensity
    if snr_db is not None:
        img = add_gaussian_noise(img, snr_db, np.random.default_rng() if rng is None else rng)
        img = np.clip(img - np.median(img), 0.0, None)
    return SourcePatch(img, pos, radius, angle)


@dataclass(frozen=True)
class FitSettings:
    """Optimizer settings for :func:`fit_seidel`.

    ``lr`` decays on a cosine schedule to ``lr_floor * lr``.  Restart starts
    are a Latin hypercube sample of ``[init_low, init_high]`` waves, so each
    coefficient's range is covered evenly even with few restarts.  With
    ``refine`` set, the best restart is finished by a Levenberg-Marquardt
    solve on the per-patch residuals (up to ``refine_evals`` evaluations).
    """

    lr: float = 0.02
    iters: int = 300
    restarts: int = 3
    init_low: float = 0.0
    init_high: float = 2.0
    tol: float = 1e-7
    lr_floor: float = 0.02
    seed: int = 0
    refine: bool = True
    refine_evals: int = 1000

    def __post_init__(self):
        if not self.lr > 0 or self.iters < 1 or self.restarts < 1:
            raise InvalidArgumentError("lr must be positive; iters and restarts must be >= 1")
        if self.init_high < self.init_low:
            raise InvalidArgumentError("init_high must be >= init_low")
        if self.refine_evals < 1:
            raise InvalidArgumentError("refine_evals must be >= 1")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class FitReport:
    coeffs: SeidelCoeffs
    per_iteration_loss: list = field(default_factory=list)
    per_patch_residual: list = field(default_factory=list)
    converged: bool = False
    unconstrained: tuple = ()
    restart_losses: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "coeffs": self.coeffs.to_dict(),
            "per_iteration_loss": [float(x) for x in self.per_iteration_loss],
            "per_patch_residual": [float(x) for x in self.per_patch_residual],
            "converged": bool(self.converged),
            "unconstrained": list(self.unconstrained),
            "restart_losses": [float(x) for x in self.restart_losses],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitReport":
        return cls(
            SeidelCoeffs.from_dict(d["coeffs"]),
            list(d.get("per_iteration_loss", [])),
            list(d.get("per_patch_residual", [])),
            bool(d.get("converged", False)),
            tuple(d.get("unconstrained", ())),
            list(d.get("restart_losses", [])),
        )


def patch_loss(data: np.ndarray, model: np.ndarray) -> tuple[float, np.ndarray]:
    """Relative residual after the best affine fit ``data ~ a * model + b``.

    Returns the loss ``||data - a model - b||^2 / ||data - mean(data)||^2`` and
    its gradient with respect to ``model``.  Fitting ``a`` makes the loss
    independent of source brightness; fitting ``b`` absorbs the pedestal left
    by clamping noise at zero.
    """
    d = data.ravel()
    m = model.ravel()
    n = d.size
    sm, sd = m.sum(), d.sum()
    mm = m @ m - sm * sm / n
    md = m @ d - sm * sd / n
    dd = d @ d - sd * sd / n
    if not dd > 0:
        raise DegeneratePatchError("patch has no contrast")
    a = md / mm if mm > 0 else 0.0
    b = (sd - a * sm) / n
    res = d - a * m - b
    loss = (res @ res) / dd
    return float(loss), (-2.0 * a / dd * res).reshape(model.shape)


def canonical_gauge(w: np.ndarray) -> np.ndarray:
    """Pick the sign of the (sphere, astigmatism, field curvature) triple."""
    w = np.array(w, dtype=float)
    if w[_EVEN_TERMS].sum() < 0:
        w[_EVEN_TERMS] *= -1
    return w


def _objective(models, data, w):
    total = 0.0
    grad = np.zeros(5)
    per = []
    for mdl, d in zip(models, data):
        psf, cache = mdl.forward(w)
        loss, g = patch_loss(d, psf)
        per.append(loss)
        total += loss
        grad += mdl.vjp(cache, g)
    k = len(models)
    return total / k, grad / k, per


def _residuals(models, data, w):
    """Stacked affine-fit residuals whose squared norm is ``k`` times the mean patch loss."""
    out = []
    for mdl, d in zip(models, data):
        m = mdl.forward(w)[0].ravel()
        y = d.ravel()
        design = np.stack([m, np.ones_like(m)], axis=1)
        coef = np.linalg.lstsq(design, y, rcond=None)[0]
        out.append((y - design @ coef) / np.linalg.norm(y - y.mean()))
    return np.concatenate(out)


def _refine(models, data, w, active, max_evals):
    """Levenberg-Marquardt on the active coefficients.

    Near aberration-free optics the loss is quartic in the coefficients, so
    Adam's steps shrink long before the optimum; a Gauss-Newton step does not.
    """
    idx = np.nonzero(active)[0]

    def fun(x):
        full = w.copy()
        full[idx] = x
        return _residuals(models, data, full)

    sol = least_squares(fun, w[idx], method="lm", xtol=1e-12, ftol=1e-14, max_nfev=max_evals)
    out = w.copy()
    out[idx] = sol.x
    return out


def fit_seidel(
    patches: list[SourcePatch], cfg: OpticalConfig, opt: FitSettings = FitSettings()
) -> FitReport:
    """Fit Seidel coefficients so synthetic PSFs match the measured patches.

    Runs ``opt.restarts`` Adam descents from random starts, keeps the one with
    the lowest final-best loss and, with ``opt.refine``, polishes it by least
    squares; the polished loss is appended to the trace.  If every patch is on axis only the sphere
    term is fitted and the others are reported as unconstrained (zero).

    Raises
    ------
    EmptyCalibrationError
        No patches were given.
    NonConvergenceError
        The loss became non-finite; the partial report is attached.
    """
    if not patches:
        raise EmptyCalibrationError("no source patches to fit")
    for p in patches:
        if p.side != cfg.psf_side:
            raise InvalidArgumentError(
                f"patch side {p.side} does not match the optical config psf_side {cfg.psf_side}"
            )
    models = [PsfModel(cfg, p.field_radius, p.field_angle, p.offset) for p in patches]
    data = [p.patch for p in patches]
    on_axis = all(p.field_radius < 1e-6 for p in patches)
    active = np.zeros(5, dtype=bool)
    active[0] = True
    if not on_axis:
        active[:] = True
    unconstrained = tuple(n for n, a in zip(COEFF_NAMES, active) if not a)

    starts = qmc.LatinHypercube(d=5, seed=np.random.default_rng(opt.seed)).random(opt.restarts)
    starts = opt.init_low + (opt.init_high - opt.init_low) * starts
    best = None
    restart_losses = []
    for start in starts:
        w = np.where(active, start, 0.0)
        adam = Adam(5)
        trace = []
        run_best = (math.inf, w.copy(), None)
        converged = False
        for it in range(opt.iters):
            loss, grad, per = _objective(models, data, w)
            trace.append(loss)
            if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
                report = FitReport(SeidelCoeffs.from_array(run_best[1]), trace, [], False, unconstrained)
                raise NonConvergenceError(f"Seidel fit loss diverged at iteration {it}", report)
            if loss < run_best[0]:
                run_best = (loss, w.copy(), per)
            if it > 0 and abs(trace[-2] - loss) <= opt.tol * max(abs(trace[-2]), 1e-300):
                converged = True
                break
            w = w + np.where(active, adam.step(grad, cosine_lr(opt.lr, it, opt.iters, opt.lr_floor)), 0.0)
        restart_losses.append(run_best[0])
        if best is None or run_best[0] < best[0][0]:
            best = (run_best, trace, converged)
    (loss, w, per), trace, converged = best
    if opt.refine:
        w_ref = _refine(models, data, w, active, opt.refine_evals)
        loss_ref, _, per_ref = _objective(models, data, w_ref)
        if math.isfinite(loss_ref) and loss_ref < loss:
            w, per = w_ref, per_ref
            trace = trace + [loss_ref]
    return FitReport(
        SeidelCoeffs.from_array(canonical_gauge(w)),
        trace,
        per,
        converged,
        unconstrained,
        restart_losses,
    )
