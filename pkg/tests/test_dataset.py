import numpy as np
import pytest

from scipy import ndimage

from goldens import RING_VS_LSI_CONSTANT_TOL
from helpers import rel_err
from ringdecon.dataset import gen_dataset, sample_coefficients, verify_manifest
from ringdecon.errors import UserInputError
from ringdecon.forward import lsi_convolve
from ringdecon.io import load_image, save_image
from ringdecon.phantoms import phantom
from ringdecon.seidel import OpticalConfig, SeidelCoeffs
from ringdecon.solvers import center_psf


@pytest.fixture
def clean_dir(tmp_path):
    d = tmp_path / "clean"
    d.mkdir()
    save_image(phantom(64, np.random.default_rng(0)), d / "scene.tif")
    return d


def test_two_entries(clean_dir, tmp_path):
    m = gen_dataset(clean_dir, tmp_path / "out", count=2, seed=1)
    assert len(m["entries"]) == 2
    for e in m["entries"]:
        w = SeidelCoeffs.from_dict(e["coeffs"]).as_array()
        assert np.all((w >= 0) & (w <= 3))
        assert load_image(tmp_path / "out" / e["blurred"]["path"]).shape == (64, 64)


def test_deterministic(clean_dir, tmp_path):
    a = gen_dataset(clean_dir, tmp_path / "a", count=2, seed=5, snr_db=20.0)
    b = gen_dataset(clean_dir, tmp_path / "b", count=2, seed=5, snr_db=20.0)
    assert [e["blurred"]["sha256"] for e in a["entries"]] == [e["blurred"]["sha256"] for e in b["entries"]]


def test_manifest_integrity(clean_dir, tmp_path):
    out = tmp_path / "out"
    m = gen_dataset(clean_dir, out, count=2, seed=1)
    assert verify_manifest(out) == []
    (out / m["entries"][1]["blurred"]["path"]).write_bytes(b"tampered")
    assert verify_manifest(out) == [str(out / m["entries"][1]["blurred"]["path"])]


def test_zero_entry_is_diffraction_blur(tmp_path):
    src = tmp_path / "smooth"
    src.mkdir()
    save_image(ndimage.gaussian_filter(np.random.default_rng(1).random((128, 128)), 2.0), src / "s.tif")
    out = tmp_path / "out"
    m = gen_dataset(src, out, count=1, seed=1, include_zero=True)
    clean = load_image(out / m["entries"][0]["clean"]["path"])
    blurred = load_image(out / m["entries"][0]["blurred"]["path"])
    ref = lsi_convolve(clean, center_psf(SeidelCoeffs(), OpticalConfig.for_image(128)))
    assert rel_err(blurred, ref) < RING_VS_LSI_CONSTANT_TOL


def test_sampler_range_and_mix():
    ws = np.array([w.as_array() for w in sample_coefficients(200, np.random.default_rng(0))])
    assert ws.min() >= 0 and ws.max() <= 3


def test_errors(tmp_path):
    with pytest.raises(UserInputError):
        gen_dataset(tmp_path / "missing", tmp_path / "out", count=1)
    (tmp_path / "empty").mkdir()
    with pytest.raises(UserInputError):
        gen_dataset(tmp_path / "empty", tmp_path / "out", count=1)
    with pytest.raises(UserInputError):
        gen_dataset(tmp_path / "empty", tmp_path / "out", count=0)
