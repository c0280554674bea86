"""Timing and accuracy benchmark of the three forward models against the oracle."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .forward import lsi_convolve, precompute_ring_spectra, ring_convolve, superpose_blur
from .io import write_csv
from .phantoms import phantom
from .polar import PolarGrid
from .seidel import OpticalConfig, SeidelCoeffs, synth_radial_psfs

__all__ = ["BenchRecord", "bench", "write_bench_csv", "loglog_slope", "level_coeffs", "BENCH_METHODS"]

BENCH_METHODS = ("true_blur", "lsi_conv", "ring_conv")


@dataclass(frozen=True)
class BenchRecord:
    """One (method, size, aberration level) cell.

    ``wall_time`` is the median over trials in seconds; for ``ring_conv`` it
    excludes the one-off spectrum precomputation.  ``mse_vs_oracle`` is NaN
    when the oracle was skipped.
    """

    method: str
    image_size: int
    off_axis_norm: float
    wall_time: float
    mse_vs_oracle: float


def level_coeffs(level: float, direction: np.ndarray, sphere: float = 0.5) -> SeidelCoeffs:
    """Coefficients with off-axis part ``level * direction / |direction|``."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    return SeidelCoeffs(sphere, *(level * d))


def _timed(fn, trials):
    times, out = [], None
    for _ in range(trials):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return out, float(np.median(times))


def _warm_up():
    cfg = OpticalConfig.for_image(8)
    x = np.zeros((8, 8))
    x[2, 3] = 1.0
    superpose_blur(x, SeidelCoeffs(0.1, 0.1), cfg)


def bench(
    sizes,
    aberration_levels,
    trials: int = 1,
    out_csv=None,
    *,
    seed: int = 0,
    sphere: float = 0.5,
    oracle_max_size: int = 256,
) -> list[BenchRecord]:
    """Run every forward model for each ``(N, level)`` cell.

    Sizes above ``oracle_max_size`` skip the oracle: its record is absent and
    the other methods report NaN error.  Records are sorted by
    ``(method, N, level)`` and optionally written to ``out_csv``.
    """
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=4)
    _warm_up()
    records = []
    for n in sizes:
        n = int(n)
        cfg = OpticalConfig.for_image(n)
        grid = PolarGrid.for_image(n)
        obj = phantom(n, np.random.default_rng([seed, n]))
        for level in aberration_levels:
            coeffs = level_coeffs(float(level), direction, sphere)
            stack = synth_radial_psfs(coeffs, grid, cfg)
            spectra = precompute_ring_spectra(stack, grid)
            truth = None
            if n <= oracle_max_size:
                truth, t = _timed(lambda: superpose_blur(obj, coeffs, cfg, max_size=oracle_max_size), trials)
                records.append(BenchRecord("true_blur", n, float(level), t, 0.0))
            for method, fn in (
                ("lsi_conv", lambda: lsi_convolve(obj, stack.psfs[0])),
                ("ring_conv", lambda: ring_convolve(obj, spectra)),
            ):
                out, t = _timed(fn, trials)
                mse = float(np.mean((out - truth) ** 2)) if truth is not None else math.nan
                records.append(BenchRecord(method, n, float(level), t, mse))
    records.sort(key=lambda r: (r.method, r.image_size, r.off_axis_norm))
    if out_csv is not None:
        write_bench_csv(records, out_csv)
    return records


def write_bench_csv(records, path) -> None:
    header = list(BenchRecord.__dataclass_fields__)
    write_csv(path, header, [list(asdict(r).values()) for r in records])


def loglog_slope(sizes, times) -> float:
    """Least-squares slope of ``log(time)`` against ``log(N)``."""
    x = np.log(np.asarray(sizes, dtype=float))
    y = np.log(np.asarray(times, dtype=float))
    return float(np.polyfit(x, y, 1)[0])
