"""Additive Gaussian noise at a target signal-to-noise ratio."""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError


def noise_sigma(signal, snr_db: float) -> float:
    """Standard deviation giving ``10 log10(mean(signal^2) / sigma^2) = snr_db``."""
    power = float(np.mean(np.square(signal)))
    if not np.isfinite(snr_db):
        raise InvalidArgumentError(f"SNR must be finite, got {snr_db}")
    return float(np.sqrt(power / 10.0 ** (snr_db / 10.0)))


def add_gaussian_noise(signal, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    a = np.asarray(signal, dtype=float)
    return a + rng.normal(0.0, noise_sigma(a, snr_db), size=a.shape)
