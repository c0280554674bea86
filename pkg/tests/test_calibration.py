import warnings

import numpy as np
import pytest

from goldens import DETECTION_NOISE_BOUND, NORMALIZE_CENTROID_BOUND
from ringdecon.calibration import (
    DetectionConfig,
    FitReport,
    FitSettings,
    SourcePatch,
    canonical_gauge,
    detect_sources,
    fit_seidel,
    normalize_patch,
    patch_loss,
    synthetic_source_patch,
)
from ringdecon.errors import DegeneratePatchError, EmptyCalibrationError, InvalidArgumentError
from ringdecon.noise import add_gaussian_noise
from ringdecon.seidel import OpticalConfig, PsfModel, SeidelCoeffs, psf_at

MINISCOPE = SeidelCoeffs(0.85, 0.56, 0.25, 0.29, 0.0)
FIT_CFG = OpticalConfig.for_image(48, psf_side=33, pupil_samples=34)
POSITIONS = [(12, 15), (40, 20), (25, 48), (50, 50), (30, 31)]
DETECT = DetectionConfig(patch_size=15, min_separation=8)
FIT_TOL = 0.05


def point_image():
    img = np.zeros((64, 64))
    for r, c in POSITIONS:
        img[r, c] = 1.0
    return img


def random_patches(coeffs, seed=0, count=6, rotate=0.0):
    rng = np.random.default_rng(seed)
    radii = rng.uniform(0.1, 1.0, count)
    angles = rng.uniform(0, 2 * np.pi, count)
    return [synthetic_source_patch(coeffs, FIT_CFG, r, a + rotate) for r, a in zip(radii, angles)]


def nearest_error(found, truth):
    return max(min(np.hypot(p.center[0] - r, p.center[1] - c) for p in found) for r, c in truth)


class TestSourcePatch:
    def test_even_side_rejected(self):
        with pytest.raises(InvalidArgumentError):
            SourcePatch(np.ones((4, 4)), (0, 0), 0.1, 0.0)

    def test_negative_rejected(self):
        with pytest.raises(InvalidArgumentError):
            SourcePatch(-np.ones((3, 3)), (0, 0), 0.1, 0.0)

    def test_radius_range(self):
        with pytest.raises(InvalidArgumentError):
            SourcePatch(np.ones((3, 3)), (0, 0), 1.5, 0.0)

    def test_offset(self):
        p = SourcePatch(np.ones((3, 3)), (10.3, 4.8), 0.1, 0.0)
        assert p.offset == pytest.approx((0.3, -0.2))


class TestDetection:
    def test_exact_deltas(self):
        found = detect_sources(point_image(), DETECT)
        assert len(found) == 5
        assert nearest_error(found, POSITIONS) < 0.1
        assert all(p.side == 15 for p in found)

    @pytest.mark.parametrize("seed", range(50))
    def test_noisy_deltas(self, seed):
        img = add_gaussian_noise(point_image(), 10.0, np.random.default_rng(seed))
        found = detect_sources(img, DETECT)
        assert len(found) == 5
        assert nearest_error(found, POSITIONS) < DETECTION_NOISE_BOUND

    def test_field_geometry(self):
        img = np.zeros((65, 65))
        img[32, 52] = 1.0
        (p,) = detect_sources(img, DetectionConfig(patch_size=9, center=(32.0, 32.0), fov_radius_px=40.0))
        assert p.field_radius == pytest.approx(0.5)
        assert p.field_angle == pytest.approx(0.0)

    def test_zero_image(self):
        with pytest.raises(EmptyCalibrationError):
            detect_sources(np.zeros((32, 32)))

    def test_close_pair_drops_dimmer(self):
        img = np.zeros((40, 40))
        img[20, 18] = 1.0
        img[20, 22] = 0.6
        with pytest.warns(UserWarning, match="dropped 1"):
            found = detect_sources(img, DetectionConfig(patch_size=9, min_separation=8))
        assert len(found) == 1
        assert found[0].center[1] == pytest.approx(18.0, abs=0.5)

    def test_config_validation(self):
        with pytest.raises(InvalidArgumentError):
            DetectionConfig(patch_size=8)
        with pytest.raises(InvalidArgumentError):
            DetectionConfig(threshold=1.5)

    def test_config_round_trip(self):
        cfg = DetectionConfig(center=(3.0, 4.0))
        assert DetectionConfig.from_dict(cfg.to_dict()) == cfg


class TestNormalizePatch:
    def test_offset_invariant(self):
        p = np.random.default_rng(0).random((9, 9))
        np.testing.assert_allclose(normalize_patch(p + 7.5), normalize_patch(p), atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_unit_sum(self, seed):
        p = np.random.default_rng(seed).normal(size=(9, 9))
        assert normalize_patch(p).sum() == pytest.approx(1.0)
        assert normalize_patch(p).min() >= 0

    @pytest.mark.parametrize("seed", range(50))
    def test_noisy_delta_centroid(self, seed):
        patch = np.zeros((15, 15))
        patch[7, 7] = 1.0
        noisy = patch + np.random.default_rng(seed).normal(0, 0.1, patch.shape)
        q = normalize_patch(noisy, noise_threshold=4.0)
        yy, xx = np.mgrid[0:15, 0:15]
        assert np.hypot((q * yy).sum() - 7, (q * xx).sum() - 7) < NORMALIZE_CENTROID_BOUND

    def test_flat_patch(self):
        with pytest.raises(DegeneratePatchError):
            normalize_patch(np.full((5, 5), 3.0))


class TestPatchLoss:
    def test_affine_invariant(self):
        m = psf_at(MINISCOPE, 0.5, FIT_CFG).intensity
        loss, _ = patch_loss(3.0 * m + 0.2, m)
        assert loss == pytest.approx(0.0, abs=1e-20)

    def test_gradient(self):
        rng = np.random.default_rng(0)
        d, m = rng.random((2, 7, 7))
        _, g = patch_loss(d, m)
        e = np.zeros_like(m)
        e[3, 4] = 1e-6
        fd = (patch_loss(d, m + e)[0] - patch_loss(d, m - e)[0]) / 2e-6
        assert g[3, 4] == pytest.approx(fd, rel=1e-5)

    def test_flat_data(self):
        with pytest.raises(DegeneratePatchError):
            patch_loss(np.ones((3, 3)), np.ones((3, 3)))

    def test_gauge(self):
        w = np.array([-1.0, 0.3, -0.2, 0.1, 0.4])
        np.testing.assert_allclose(canonical_gauge(w), [1.0, 0.3, 0.2, -0.1, 0.4])
        m = PsfModel(FIT_CFG, 0.7, 0.3, (0.2, -0.1))
        np.testing.assert_allclose(m.forward(w)[0], m.forward(canonical_gauge(w))[0], atol=1e-14)


class TestGradient:
    @pytest.mark.parametrize("seed", range(10))
    def test_objective_gradient(self, seed):
        rng = np.random.default_rng(100 + seed)
        patches = random_patches(MINISCOPE, seed=seed, count=3)
        models = [PsfModel(FIT_CFG, p.field_radius, p.field_angle, p.offset) for p in patches]
        w = rng.uniform(0, 2, 5)

        def loss(v):
            return sum(patch_loss(p.patch, m.forward(v)[0])[0] for p, m in zip(patches, models))

        grad = np.zeros(5)
        for p, m in zip(patches, models):
            h, cache = m.forward(w)
            grad += m.vjp(cache, patch_loss(p.patch, h)[1])
        eps = 1e-6
        fd = np.array([(loss(w + eps * e) - loss(w - eps * e)) / (2 * eps) for e in np.eye(5)])
        assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) < 1e-4


class TestFit:
    def test_recovers_miniscope(self):
        rep = fit_seidel(random_patches(MINISCOPE), FIT_CFG)
        np.testing.assert_allclose(rep.coeffs.as_array(), MINISCOPE.as_array(), atol=FIT_TOL)
        assert np.all(np.isfinite(rep.per_iteration_loss))
        assert len(rep.per_patch_residual) == 6
        assert len(rep.restart_losses) == 3

    def test_zero_coeffs(self):
        patches = random_patches(SeidelCoeffs())
        models = [PsfModel(FIT_CFG, p.field_radius, p.field_angle, p.offset) for p in patches]
        assert all(patch_loss(p.patch, m.forward(np.zeros(5))[0])[0] < 1e-20 for p, m in zip(patches, models))
        rep = fit_seidel(patches, FIT_CFG)
        assert np.all(np.abs(rep.coeffs.as_array()) < 0.02)

    def test_rotation_consistency(self):
        a = fit_seidel(random_patches(MINISCOPE), FIT_CFG).coeffs.as_array()
        b = fit_seidel(random_patches(MINISCOPE, rotate=0.9), FIT_CFG).coeffs.as_array()
        np.testing.assert_allclose(a, b, atol=FIT_TOL)

    def test_on_axis_only_fits_sphere(self):
        p = synthetic_source_patch(SeidelCoeffs(0.6, 0.5, 0.2), FIT_CFG, 0.0, 0.0)
        rep = fit_seidel([p], FIT_CFG)
        assert rep.unconstrained == ("coma", "astigmatism", "field_curvature", "distortion")
        assert np.all(rep.coeffs.as_array()[1:] == 0)
        assert rep.coeffs.sphere == pytest.approx(0.6, abs=FIT_TOL)

    def test_deterministic(self):
        patches = random_patches(MINISCOPE, count=3)
        s = FitSettings(iters=40, restarts=2)
        a, b = fit_seidel(patches, FIT_CFG, s), fit_seidel(patches, FIT_CFG, s)
        assert a.to_dict() == b.to_dict()

    def test_report_round_trip(self):
        rep = fit_seidel(random_patches(MINISCOPE, count=2), FIT_CFG, FitSettings(iters=5, restarts=1))
        assert FitReport.from_dict(rep.to_dict()).to_dict() == rep.to_dict()

    def test_no_patches(self):
        with pytest.raises(EmptyCalibrationError):
            fit_seidel([], FIT_CFG)

    def test_patch_size_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            fit_seidel([SourcePatch(np.ones((5, 5)), (0, 0), 0.2, 0.0)], FIT_CFG)

    @pytest.mark.parametrize("kwargs", [dict(lr=0.0), dict(restarts=0), dict(init_low=2.0, init_high=1.0)])
    def test_settings_validation(self, kwargs):
        with pytest.raises(InvalidArgumentError):
            FitSettings(**kwargs)


@pytest.fixture(scope="module")
def seeded_fits():
    """Fifty single-restart fits of noiseless patches at three distinct radii."""
    patches = [synthetic_source_patch(MINISCOPE, FIT_CFG, r, a) for r, a in zip((0.3, 0.6, 0.9), (0.5, 2.6, 4.4))]
    return [fit_seidel(patches, FIT_CFG, FitSettings(restarts=1, seed=s)) for s in range(50)]


class TestFitStatistics:
    def test_zero_loss_solutions_are_unique(self, seeded_fits):
        runs = seeded_fits[:20]
        solved = [r for r in runs if r.per_iteration_loss[-1] < 1e-10]
        assert len(solved) >= 5
        for r in solved:
            np.testing.assert_allclose(r.coeffs.as_array(), MINISCOPE.as_array(), atol=FIT_TOL)

    def test_median_loss_non_increasing(self, seeded_fits):
        traces = [r.per_iteration_loss for r in seeded_fits]
        length = max(map(len, traces))
        padded = np.array([t + [t[-1]] * (length - len(t)) for t in traces])
        median = np.median(padded, axis=0)
        assert np.all(np.diff(median[10:]) <= 0)
