"""Measure the regression bounds frozen into the test suite.

Each quantity is computed with an oracle that does not share code with the
function under test (analytic images, explicit DFT sums, direct loops).  Run
``python scripts/derive_goldens.py`` and copy the printed values into
``tests/goldens.py`` with the stated margin when the numerics change on
purpose.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ringdecon.bench import bench
from ringdecon.calibration import DetectionConfig, detect_sources, normalize_patch
from ringdecon.forward import (
    lsi_convolve,
    lsi_convolve_adjoint,
    precompute_ring_spectra,
    ring_convolve,
    ring_convolve_adjoint,
)
from ringdecon.forward import superpose_blur
from ringdecon.noise import add_gaussian_noise
from ringdecon.phantoms import phantom
from ringdecon.polar import PolarGrid, cartesian_matrix, from_polar, polar_matrix, rotate_image, to_polar
from ringdecon.roft import lri_filter_spectrum, psf_metrics, source_roft
from ringdecon.solvers import SolverSettings, center_psf, deconvolve, psnr, ring_deconvolve, seidel_deconvolve, blind_deconvolve
from ringdecon.seidel import OpticalConfig, Psf, PsfRadialStack, SeidelCoeffs, pupil, psf_from_pupil, synth_radial_psfs


def gaussian_scene(n, seed, count=8, sigma=(3.0, 6.0)):
    """Analytic sum of Gaussians; returns a callable f(row, col) and its samples."""
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


def rotation_shift_error(n=64, k=1, seed=0):
    grid = PolarGrid.for_image(n)
    f, img = gaussian_scene(n, seed)
    cy, cx = grid.center
    d = k * 2 * np.pi / grid.num_angles
    rr, cc = np.mgrid[0:n, 0:n].astype(float)
    dy, dx = rr - cy, cc - cx
    rot = f(cy + np.cos(d) * dy - np.sin(d) * dx, cx + np.sin(d) * dy + np.cos(d) * dx)
    a = to_polar(rot, grid).samples
    b = np.roll(to_polar(img, grid).samples, k, axis=0)
    mask = grid.radii <= (n - 1) / 2
    return np.linalg.norm((a - b)[:, mask]) / np.linalg.norm(b[:, mask])


def round_trip_error(n=128, seed=0):
    grid = PolarGrid.for_image(n)
    _, img = gaussian_scene(n, seed)
    back = from_polar(to_polar(img, grid), n)
    return np.linalg.norm(back - img) / np.linalg.norm(img)


def dft_psf(p, cfg):
    """Explicit DFT sum for the PSF, independent of the FFT shift bookkeeping."""
    L, Q, P = cfg.pupil_samples, cfg.fft_size, cfg.psf_side
    u = np.arange(L) - L // 2
    x = np.arange(P) - P // 2
    k = np.exp(-2j * np.pi * np.outer(x, u) / Q)
    e = k @ p @ k.T
    i = np.abs(e) ** 2
    return i / i.sum()


def measure_basics():
    print("rotation-to-shift (k=1, 3 seeds):", max(rotation_shift_error(seed=s) for s in range(3)))
    print("rotation-to-shift (k=3, 3 seeds):", max(rotation_shift_error(k=3, seed=s) for s in range(3)))
    print("polar round trip 128 (3 seeds):", max(round_trip_error(seed=s) for s in range(3)))
    print("roft cartesian round trip 64 (3 seeds):", max(round_trip_error(64, seed=s) for s in range(3)))

    cfg = OpticalConfig.for_image(64)
    worst = 0.0
    for w in [SeidelCoeffs(), SeidelCoeffs(1.0), SeidelCoeffs(0.7, 0.8, 0.3, 0.4, 0.2)]:
        for r in (0.0, 0.6):
            p = pupil(w, r, cfg)
            worst = max(worst, np.abs(psf_from_pupil(p, cfg).intensity - dft_psf(p, cfg)).max())
    print("psf vs explicit DFT max abs:", worst)

    sph = dft_psf(pupil(SeidelCoeffs(1.0), 0.0, cfg), cfg)[1:, 1:]
    print("sphere mirror residual:", np.abs(sph - sph[:, ::-1]).max() / sph.max(),
          "transpose residual:", np.abs(sph - sph.T).max() / sph.max())
    coma = dft_psf(pupil(SeidelCoeffs(0.0, 1.0), 0.8, cfg), cfg)[1:, 1:]
    print("coma radial mirror residual:", np.abs(coma - coma[:, ::-1]).max() / coma.max(),
          "coma tangential mirror residual:", np.abs(coma - coma[::-1, :]).max() / coma.max())

    grid = PolarGrid.for_image(64)
    rng = np.random.default_rng(0)
    lip = 0.0
    draws = [np.full(5, 3.0)] + [rng.uniform(-3, 3, 5) for _ in range(10)]
    for w in draws:
        st = synth_radial_psfs(SeidelCoeffs.from_array(w), grid, cfg).array()
        lip = max(lip, np.linalg.norm(np.diff(st, axis=0), axis=(1, 2)).max() / grid.dr)
    print("PSF continuity (L2 per px of radius):", lip)

    n = 128
    cfg128 = OpticalConfig.for_image(n)
    grid128 = PolarGrid.for_image(n)
    img = ndimage.gaussian_filter(np.random.default_rng(1).random((n, n)), 2.0)
    worst = 0.0
    for s in (0.0, 0.5, 1.0):
        st = synth_radial_psfs(SeidelCoeffs(s), grid128, cfg128)
        sp = precompute_ring_spectra(st, grid128)
        a, b = ring_convolve(img, sp), lsi_convolve(img, st.psfs[0])
        worst = max(worst, np.linalg.norm(a - b) / np.linalg.norm(b))
    print("ring vs lsi, constant stack, 128:", worst)

    n = 64
    y = np.random.default_rng(2).random((n, n))
    worst = 0.0
    for s in (0.0, 0.5, 1.0):
        st = synth_radial_psfs(SeidelCoeffs(s), grid, cfg)
        sp = precompute_ring_spectra(st, grid)
        a, b = ring_convolve_adjoint(y, sp), lsi_convolve_adjoint(y, st.psfs[0])
        worst = max(worst, np.linalg.norm(a - b) / np.linalg.norm(b))
    print("ring adjoint vs lsi adjoint, symmetric PSF, 64:", worst)

    delta = np.zeros((64, 64))
    delta[32, 32] = 1.0
    dstack = PsfRadialStack(tuple(Psf(delta, r) for r in grid.radii / cfg.fov_radius_px), grid)
    dsp = precompute_ring_spectra(dstack, grid)
    _, img = gaussian_scene(64, 0)
    print("delta-PSF ring convolution vs identity:",
          np.linalg.norm(ring_convolve(img, dsp) - img) / np.linalg.norm(img))

    ms = []
    for wf in np.linspace(0, 2, 5):
        st = synth_radial_psfs(SeidelCoeffs(0.2, 0, 0, wf, 0), grid, cfg)
        ms.append([m.mix_width for m in psf_metrics(st, grid)][30])
    print("mix width at ring 30 over field curvature sweep:", ms)


def delta_stack(grid, cfg, side=65):
    d = np.zeros((side, side))
    d[side // 2, side // 2] = 1.0
    return PsfRadialStack(tuple(Psf(d, r) for r in grid.radii / cfg.fov_radius_px), grid)


def gaussian_psf(side, sigma_row, sigma_col):
    c = side // 2
    y, x = np.mgrid[0:side, 0:side] - c
    h = np.exp(-0.5 * (y**2 / sigma_row**2 + x**2 / sigma_col**2))
    return h / h.sum()


def constant_stack(h, grid):
    return PsfRadialStack(tuple(Psf(h, j + 1e-3) for j in range(grid.num_radii)), grid)


def measure_operators():
    n = 64
    grid, cfg = PolarGrid.for_image(n), OpticalConfig.for_image(n)
    _, img = gaussian_scene(n, 0)
    dsp = precompute_ring_spectra(delta_stack(grid, cfg), grid)

    y = np.random.default_rng(3).random((n, n))
    a = ring_convolve_adjoint(y, dsp)
    b = polar_matrix(grid, n).T @ (cartesian_matrix(grid, n).T @ y.ravel())
    print("delta adjoint vs round-trip adjoint:", np.linalg.norm(a - b.reshape(n, n)) / np.linalg.norm(b))

    blurred = img
    res = ring_deconvolve(blurred, dsp, s=SolverSettings(max_iters=300, optimizer="gd", step=0.5, nonneg=False))
    print("delta ring_deconvolve vs input:", np.linalg.norm(res.image - img) / np.linalg.norm(img))

    spec = source_roft(img, grid)
    out = lri_filter_spectrum(spec, dsp)
    low = np.abs(np.fft.fftfreq(grid.num_angles, 1 / grid.num_angles)) <= 16
    num = np.linalg.norm((out.spectrum - spec.spectrum)[:, low])
    print("delta filter vs identity, |xi|<=16:", num / np.linalg.norm(spec.spectrum[:, low]),
          "all xi:", np.linalg.norm(out.spectrum - spec.spectrum) / np.linalg.norm(spec.spectrum))

    f, _ = gaussian_scene(n, 1)
    st = synth_radial_psfs(SeidelCoeffs(0.4, 0.6, 0.3, 0.3, 0.1), grid, cfg)
    sp = precompute_ring_spectra(st, grid)
    cy, cx = grid.center
    worst = 0.0
    for k in (1, 3):
        d = k * 2 * np.pi / grid.num_angles
        rr, cc = np.mgrid[0:n, 0:n].astype(float)
        dy, dx = rr - cy, cc - cx
        rot = f(cy + np.cos(d) * dy - np.sin(d) * dx, cx + np.sin(d) * dy + np.cos(d) * dx)
        pa = to_polar(ring_convolve(rot, sp), grid).samples
        pb = np.roll(to_polar(ring_convolve(f(rr, cc), sp), grid).samples, k, axis=0)
        mask = grid.radii <= (n - 1) / 2
        worst = max(worst, np.linalg.norm((pa - pb)[:, mask]) / np.linalg.norm(pb[:, mask]))
    print("ring rotation equivariance k=1,3:", worst)

    rr, cc = np.mgrid[0:n, 0:n]
    disk = np.hypot(rr - cy, cc - cx) <= 20
    worst = 0.0
    for seed in range(5):
        obj = phantom(n, np.random.default_rng(seed)) * disk
        for w in (SeidelCoeffs(0.3), SeidelCoeffs(0.5, 0.8, 0.3, 0.4, 0.1)):
            spw = precompute_ring_spectra(synth_radial_psfs(w, grid, cfg), grid)
            worst = max(worst, abs(ring_convolve(obj, spw).sum() / obj.sum() - 1))
    print("flux deviation, object in r<=20 disk:", worst)

    errs, levels = [], np.linspace(0, 1.5, 6)
    direction = np.array([0.6, 0.4, 0.5, 0.2])
    direction /= np.linalg.norm(direction)
    obj = phantom(n, np.random.default_rng(7))
    for lv in levels:
        co = SeidelCoeffs(0.5, *(lv * direction))
        tr = superpose_blur(obj, co, cfg)
        errs.append(np.linalg.norm(lsi_convolve(obj, center_psf(co, cfg)) - tr) / np.linalg.norm(tr))
    fit = np.polyfit(levels, errs, 1)
    pred = np.polyval(fit, levels)
    r2 = 1 - np.sum((errs - pred) ** 2) / np.sum((errs - np.mean(errs)) ** 2)
    print("lsi rel error over levels:", np.round(errs, 4), "slope, intercept:", fit, "R^2:", r2)

    side = 33
    compact = gaussian_psf(side, 1.0, 1.0)
    radial = gaussian_psf(side, 1.0, 3.0)
    angular = gaussian_psf(side, 3.0, 1.0)
    j = 30
    out = {}
    for name, h in (("compact", compact), ("radial", radial), ("angular", angular)):
        m = psf_metrics(constant_stack(h, grid), grid)[j]
        out[name] = (m.bandwidth, m.mix_width)
    print("metrics at ring 30 (bandwidth, mix width):", out)

    det = DetectionConfig(patch_size=15, min_separation=8)
    pos = [(12, 15), (40, 20), (25, 48), (50, 50), (30, 31)]
    clean = np.zeros((n, n))
    for pr, pc in pos:
        clean[pr, pc] = 1.0
    worst = 0.0
    for seed in range(50):
        im = add_gaussian_noise(clean, 10.0, np.random.default_rng(seed))
        found = detect_sources(im, det)
        assert len(found) == 5, (seed, len(found))
        for pr, pc in pos:
            worst = max(worst, min(np.hypot(p.center[0] - pr, p.center[1] - pc) for p in found))
    print("detection center error at 10 dB over 50 seeds:", worst)

    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        patch = np.zeros((15, 15))
        patch[7, 7] = 1.0
        noisy = patch + rng.normal(0, 0.1, patch.shape)
        q = normalize_patch(noisy, noise_threshold=4.0)
        yy, xx = np.mgrid[0:15, 0:15]
        worst = max(worst, np.hypot((q * yy).sum() - 7, (q * xx).sum() - 7))
    print("normalize_patch centroid shift over 50 seeds:", worst)

    gains = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = phantom(n, rng)
        truth = center_psf(SeidelCoeffs(0.85), cfg)
        blurred = add_gaussian_noise(lsi_convolve(x, truth), 30.0, rng)
        measured = np.clip(add_gaussian_noise(truth.intensity, 0.0, rng), 0, None)
        p_seidel = psnr(x, seidel_deconvolve(blurred, SeidelCoeffs(0.85), cfg).image)
        p_meas = psnr(x, deconvolve(blurred, measured / measured.sum(), "wiener").image)
        gains.append(p_seidel - p_meas)
    print("seidel minus measured-PSF wiener PSNR (dB):", np.round(gains, 2))

    ests = []
    for seed in range(5):
        x = phantom(n, np.random.default_rng(seed))
        ests.append(blind_deconvolve(x, cfg)[0])
    print("blind estimate on sharp phantoms:", np.round(ests, 3))

    recs = bench([64], [0.0])
    print("bench level-0 MSE vs oracle:", {r.method: r.mse_vs_oracle for r in recs})


def main():
    measure_basics()
    measure_operators()


if __name__ == "__main__":
    main()
