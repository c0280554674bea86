"""Report figures rendered to files with the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "display_stretch",
    "plot_bench",
    "plot_fit_trace",
    "plot_psf_stack",
    "plot_metrics",
    "plot_images",
    "plot_roft",
]


def display_stretch(img, low: float = 1.0, high: float = 99.5) -> np.ndarray:
    """Percentile contrast stretch to [0, 1] for viewing only."""
    a = np.asarray(img, dtype=float)
    lo, hi = np.percentile(a, [low, high])
    if hi <= lo:
        return np.zeros_like(a)
    return np.clip((a - lo) / (hi - lo), 0.0, 1.0)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_bench(records, path) -> Path:
    """Error against aberration level (left) and runtime against size (right)."""
    fig, (ax_err, ax_time) = plt.subplots(1, 2, figsize=(10, 4))
    methods = sorted({r.method for r in records})
    for m in methods:
        rs = [r for r in records if r.method == m]
        smallest = min(r.image_size for r in rs)
        pts = sorted((r.off_axis_norm, r.mse_vs_oracle) for r in rs if r.image_size == smallest)
        if m != "true_blur" and pts:
            ax_err.plot(*zip(*pts), marker="o", label=m)
        sizes = sorted({r.image_size for r in rs})
        times = [np.median([r.wall_time for r in rs if r.image_size == n]) for n in sizes]
        ax_time.loglog(sizes, times, marker="o", label=m)
    ax_err.set_xlabel("off-axis aberration norm (waves)")
    ax_err.set_ylabel("MSE vs oracle")
    ax_err.legend()
    ax_time.set_xlabel("image size N")
    ax_time.set_ylabel("wall time (s)")
    ax_time.legend()
    return _save(fig, path)


def plot_fit_trace(loss, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(np.arange(1, len(loss) + 1), np.maximum(loss, 1e-300))
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    return _save(fig, path)


def plot_psf_stack(stack, path, count: int = 5) -> Path:
    """A few PSFs from the center to the edge of the field."""
    idx = np.unique(np.linspace(0, len(stack) - 1, count).round().astype(int))
    fig, axes = plt.subplots(1, len(idx), figsize=(2.4 * len(idx), 2.6))
    for ax, j in zip(np.atleast_1d(axes), idx):
        p = stack.psfs[j]
        ax.imshow(np.sqrt(p.intensity), cmap="magma")
        ax.set_title(f"r = {p.source_radius:.2f}")
        ax.axis("off")
    return _save(fig, path)


def plot_metrics(metrics, path) -> Path:
    r = [m.radius for m in metrics]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(r, [m.bandwidth for m in metrics], label="bandwidth (cycles/turn)")
    ax.plot(r, [m.mix_width for m in metrics], label="mix width (rings)")
    ax.set_xlabel("source radius (px)")
    ax.legend()
    return _save(fig, path)


def plot_images(images: dict, path, stretch: bool = False) -> Path:
    """Side-by-side grayscale panels, one per ``title -> image`` entry."""
    fig, axes = plt.subplots(1, len(images), figsize=(3.2 * len(images), 3.4))
    for ax, (title, img) in zip(np.atleast_1d(axes), images.items()):
        a = display_stretch(img) if stretch else np.asarray(img)
        ax.imshow(a, cmap="gray")
        ax.set_title(title)
        ax.axis("off")
    return _save(fig, path)


def plot_roft(spec, path) -> Path:
    """Log magnitude of a RoFT with zero frequency centered."""
    mag = np.log10(np.abs(np.fft.fftshift(spec.spectrum, axes=-1)) + 1e-12)
    m = spec.grid.num_angles
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.imshow(
        mag,
        aspect="auto",
        origin="lower",
        extent=(-m // 2, m - m // 2, 0, spec.grid.max_radius),
        cmap="viridis",
    )
    ax.set_xlabel("angular frequency (cycles/turn)")
    ax.set_ylabel("radius (px)")
    return _save(fig, path)
