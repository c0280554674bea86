import numpy as np

from ringdecon.seidel import Psf, PsfRadialStack


def gaussian_scene(n, seed, count=8, sigma=(3.0, 6.0)):
    """Sum of Gaussians; returns the analytic function ``f(row, col)`` and its samples."""
    rng = np.random.default_rng(seed)
    c = rng.uniform(n * 0.15, n * 0.85, (count, 2))
    s = rng.uniform(*sigma, count)
    a = rng.uniform(0.3, 1.0, count)

    def f(r, q):
        out = np.zeros(np.broadcast(r, q).shape)
        for (cy, cx), sk, ak in zip(c, s, a):
            out += ak * np.exp(-0.5 * ((r - cy) ** 2 + (q - cx) ** 2) / sk**2)
        return out

    rr, cc = np.mgrid[0:n, 0:n].astype(float)
    return f, f(rr, cc)


def delta_stack(grid, cfg, side=65):
    d = np.zeros((side, side))
    d[side // 2, side // 2] = 1.0
    return PsfRadialStack(tuple(Psf(d, r) for r in grid.radii / cfg.fov_radius_px), grid)


def rel_err(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b))
