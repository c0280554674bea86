import pytest

from helpers import delta_stack
from ringdecon.forward import precompute_ring_spectra
from ringdecon.polar import PolarGrid
from ringdecon.seidel import OpticalConfig, SeidelCoeffs, synth_radial_psfs


@pytest.fixture(scope="session")
def grid64():
    return PolarGrid.for_image(64)


@pytest.fixture(scope="session")
def cfg64():
    return OpticalConfig.for_image(64)


@pytest.fixture(scope="session")
def lri_coeffs():
    return SeidelCoeffs(0.5, 0.7, 0.3, 0.4, 0.1)


@pytest.fixture(scope="session")
def stack64(grid64, cfg64, lri_coeffs):
    return synth_radial_psfs(lri_coeffs, grid64, cfg64)


@pytest.fixture(scope="session")
def spectra64(stack64, grid64):
    return precompute_ring_spectra(stack64, grid64)


@pytest.fixture(scope="session")
def delta_spectra64(grid64, cfg64):
    return precompute_ring_spectra(delta_stack(grid64, cfg64), grid64)


@pytest.fixture(scope="session")
def grid32():
    return PolarGrid.for_image(32)


@pytest.fixture(scope="session")
def cfg32():
    return OpticalConfig.for_image(32)


@pytest.fixture(scope="session")
def spectra32(grid32, cfg32, lri_coeffs):
    return precompute_ring_spectra(synth_radial_psfs(lri_coeffs, grid32, cfg32), grid32)
