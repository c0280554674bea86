"""Forward blurring and deblurring for rotationally symmetric imaging systems."""

__version__ = "0.1.0"

from .calibration import (  # noqa: E402
    DetectionConfig,
    FitReport,
    FitSettings,
    SourcePatch,
    detect_sources,
    fit_seidel,
    normalize_patch,
)
from .errors import NumericalError, RdmError, UserInputError  # noqa: E402
from .forward import (  # noqa: E402
    RingSpectrumStack,
    lsi_convolve,
    precompute_ring_spectra,
    ring_convolve,
    ring_convolve_adjoint,
    superpose_blur,
)
from .polar import PolarGrid, PolarImage, from_polar, to_polar  # noqa: E402
from .roft import RoftImage, inverse_roft, lri_filter_spectrum, psf_metrics, roft  # noqa: E402
from .seidel import (  # noqa: E402
    OpticalConfig,
    Psf,
    PsfRadialStack,
    SeidelCoeffs,
    psf_from_pupil,
    pupil,
    synth_radial_psfs,
    wavefront,
)
from .solvers import (  # noqa: E402
    DeblurResult,
    SolverSettings,
    blind_deconvolve,
    deconvolve,
    psnr,
    ring_deconvolve,
    seidel_deconvolve,
)
