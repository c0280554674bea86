"""Adaptive-moment (Adam) first-order updates shared by the fitting and deblurring loops."""

from __future__ import annotations

import numpy as np


class Adam:
    """Adam update rule with bias-corrected moment estimates.

    Parameters
    ----------
    shape : tuple
        Shape of the parameter array being optimized.
    beta1, beta2 : float
        Decay rates of the first and second moment estimates.
    eps : float
        Added to the root second moment to avoid division by zero.
    """

    def __init__(self, shape, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, grad: np.ndarray, lr: float) -> np.ndarray:
        """Return the parameter increment for gradient ``grad``."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        m_hat = self.m / (1 - b1**self.t)
        v_hat = self.v / (1 - b2**self.t)
        return -lr * m_hat / (np.sqrt(v_hat) + self.eps)


def cosine_lr(base: float, it: int, total: int, floor: float = 0.02) -> float:
    """Cosine decay from ``base`` down to ``floor * base`` over ``total`` steps."""
    if total <= 1:
        return base
    frac = min(it / (total - 1), 1.0)
    return base * (floor + (1 - floor) * 0.5 * (1 + np.cos(np.pi * frac)))
