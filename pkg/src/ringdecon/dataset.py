"""Synthetic blurred/clean training pairs generated with ring convolution."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .config import GridSettings
from .errors import UserInputError
from .forward import precompute_ring_spectra, ring_convolve
from .io import ensure_writable_dir, load_image, load_json, save_image, save_json, split_channels
from .noise import add_gaussian_noise
from .seidel import OpticalConfig, SeidelCoeffs, synth_radial_psfs

__all__ = ["sample_coefficients", "gen_dataset", "verify_manifest", "sha256_file"]

COEFF_RANGE = (0.0, 3.0)
_GRID_LEVELS = np.linspace(*COEFF_RANGE, 5)


def sample_coefficients(count: int, rng: np.random.Generator, grid_jitter: float = 0.15) -> list[SeidelCoeffs]:
    """Draw ``count`` coefficient sets in [0, 3] waves.

    Even entries are uniform; odd entries pick each coefficient from a
    five-level grid over the range and perturb it by Gaussian jitter, clipped
    back into the range.
    """
    out = []
    for k in range(count):
        if k % 2 == 0:
            w = rng.uniform(*COEFF_RANGE, 5)
        else:
            w = rng.choice(_GRID_LEVELS, 5) + rng.normal(0.0, grid_jitter, 5)
        out.append(SeidelCoeffs.from_array(np.clip(w, *COEFF_RANGE)))
    return out


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _clean_images(clean_dir: Path) -> list[Path]:
    if not clean_dir.is_dir():
        raise UserInputError(f"clean image directory not found: {clean_dir}")
    files = sorted(p for p in clean_dir.iterdir() if p.suffix.lower() in (".tif", ".tiff"))
    if not files:
        raise UserInputError(f"no TIFF images in {clean_dir}")
    return files


def gen_dataset(
    clean_dir,
    out_dir,
    count: int,
    seed: int = 0,
    *,
    snr_db: float | None = None,
    include_zero: bool = False,
    grid_settings: GridSettings = GridSettings(),
    optical: OpticalConfig | None = None,
) -> dict:
    """Blur every clean image with ``count`` sampled coefficient sets.

    Writes ``clean/`` and ``blurred/`` TIFFs plus ``manifest.json`` mapping each
    pair to its coefficients, seed and SHA-256 checksums.  ``include_zero``
    replaces the first coefficient set by all zeros.
    """
    if count < 1:
        raise UserInputError(f"count must be >= 1, got {count}")
    files = _clean_images(Path(clean_dir))
    out = ensure_writable_dir(out_dir)
    ensure_writable_dir(out / "clean")
    ensure_writable_dir(out / "blurred")
    rng = np.random.default_rng(seed)
    coeff_sets = sample_coefficients(count, rng)
    if include_zero:
        coeff_sets[0] = SeidelCoeffs()
    images = {f: load_image(f) for f in files}
    entries = []
    for k, coeffs in enumerate(coeff_sets):
        cache = {}
        for f in files:
            chans = split_channels(images[f])
            n = chans[0].shape[0]
            if chans[0].shape[0] != chans[0].shape[1]:
                raise UserInputError(f"{f}: images must be square, got {chans[0].shape}")
            if n not in cache:
                cfg = optical if optical is not None else OpticalConfig.for_image(n)
                grid = grid_settings.build(n)
                cache[n] = precompute_ring_spectra(synth_radial_psfs(coeffs, grid, cfg), grid)
            pair_seed = int(rng.integers(0, 2**31 - 1))
            noise_rng = np.random.default_rng(pair_seed)
            blurred = []
            for c in chans:
                b = ring_convolve(c, cache[n])
                if snr_db is not None:
                    b = add_gaussian_noise(b, snr_db, noise_rng)
                blurred.append(b)
            stem = f"{k:04d}_{f.stem}"
            clean_path = out / "clean" / f"{stem}.tif"
            blur_path = out / "blurred" / f"{stem}.tif"
            save_image(np.stack(chans) if len(chans) > 1 else chans[0], clean_path)
            save_image(np.stack(blurred) if len(blurred) > 1 else blurred[0], blur_path)
            entries.append(
                {
                    "index": k,
                    "source": f.name,
                    "coeffs": coeffs.to_dict(),
                    "seed": pair_seed,
                    "snr_db": snr_db,
                    "clean": {"path": str(clean_path.relative_to(out)), "sha256": sha256_file(clean_path)},
                    "blurred": {"path": str(blur_path.relative_to(out)), "sha256": sha256_file(blur_path)},
                }
            )
    manifest = {
        "seed": seed,
        "count": count,
        "coeff_range": list(COEFF_RANGE),
        "grid": grid_settings.to_dict(),
        "optical": None if optical is None else optical.to_dict(),
        "entries": entries,
    }
    save_json(manifest, out / "manifest.json")
    return manifest


def verify_manifest(out_dir) -> list[str]:
    """Return the manifest paths that are missing or fail their checksum."""
    out = Path(out_dir)
    manifest = load_json(out / "manifest.json")
    bad = []
    for e in manifest["entries"]:
        for key in ("clean", "blurred"):
            p = out / e[key]["path"]
            if not p.exists() or sha256_file(p) != e[key]["sha256"]:
                bad.append(str(p))
    return bad
