"""TIFF, JSON and CSV input/output.

Images are read as float64.  Integer samples are divided by the maximum of
their type (255 or 65535) so they land in [0, 1]; 32-bit float samples are
kept exactly so that a save/load round trip is bit-identical.  Images are
written as uncompressed 32-bit float TIFF.  Multi-channel files load as a
``(C, H, W)`` array.
"""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import numpy as np
import tifffile
from scipy import ndimage

from .errors import ImageFormatError, InvalidArgumentError, UserInputError

__all__ = [
    "load_image",
    "save_image",
    "split_channels",
    "merge_channels",
    "load_json",
    "save_json",
    "write_csv",
    "read_csv",
    "remove_hot_pixels",
]

_INT_TYPES = (np.uint8, np.uint16)
_COMPRESSIONS = {"NONE", "ADOBE_DEFLATE", "DEFLATE"}


def _check_page(page, path) -> None:
    comp = getattr(page.compression, "name", str(page.compression))
    if comp not in _COMPRESSIONS:
        raise ImageFormatError(f"{path}: unsupported Compression {comp}; expected one of {sorted(_COMPRESSIONS)}")
    dt = np.dtype(page.dtype)
    if dt not in [np.dtype(t) for t in _INT_TYPES] and dt != np.dtype(np.float32):
        raise ImageFormatError(
            f"{path}: unsupported BitsPerSample/SampleFormat ({page.bitspersample}-bit {dt.kind}); "
            "expected 8/16-bit unsigned integer or 32-bit float"
        )


def load_image(path) -> np.ndarray:
    """Read a TIFF as float64 ``(H, W)`` or, for several channels, ``(C, H, W)``.

    Raises
    ------
    ImageFormatError
        Unsupported bit depth, sample format or compression, or an unreadable file.
    """
    path = Path(path)
    if not path.exists():
        raise UserInputError(f"image file not found: {path}")
    try:
        with tifffile.TiffFile(path) as tf:
            if not tf.pages:
                raise ImageFormatError(f"{path}: file contains no images")
            _check_page(tf.pages[0], path)
            series = tf.series[0]
            raw = series.asarray()
            axes = series.axes
            extra = getattr(tf.pages[0], "extrasamples", ())
    except tifffile.TiffFileError as exc:
        raise ImageFormatError(f"{path}: not a readable TIFF ({exc})") from exc
    if raw.ndim == 3 and axes.endswith("S"):
        raw = np.moveaxis(raw, -1, 0)
        if extra:
            raw = raw[: raw.shape[0] - len(extra)]
    elif raw.ndim not in (2, 3):
        raise ImageFormatError(f"{path}: expected a 2D image or channel stack, got axes {axes!r}")
    if raw.dtype.kind == "u":
        out = raw.astype(np.float64) / np.iinfo(raw.dtype).max
    else:
        out = raw.astype(np.float64)
    if not np.all(np.isfinite(out)):
        raise ImageFormatError(f"{path}: image contains non-finite samples")
    return out[0] if out.ndim == 3 and out.shape[0] == 1 else out


def save_image(img, path, metadata: dict | None = None) -> None:
    """Write ``(H, W)`` or ``(C, H, W)`` data as 32-bit float TIFF.

    Three-channel data is written as interleaved RGB; other channel counts as
    a planar stack.  ``metadata`` is stored as JSON in the image description.
    """
    a = np.asarray(img)
    if a.ndim not in (2, 3):
        raise InvalidArgumentError(f"expected a 2D image or (C, H, W) stack, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError("refusing to save an image with non-finite values")
    a = a.astype(np.float32)
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    desc = json.dumps(metadata, default=_json_default) if metadata else None
    kw = dict(description=desc, metadata=None)
    if a.ndim == 3 and a.shape[0] == 3:
        tifffile.imwrite(path, np.moveaxis(a, 0, -1), photometric="rgb", **kw)
    elif a.ndim == 3:
        tifffile.imwrite(path, a, photometric="minisblack", planarconfig="separate", **kw)
    else:
        tifffile.imwrite(path, a, photometric="minisblack", **kw)


def split_channels(img) -> list[np.ndarray]:
    a = np.asarray(img)
    return [a] if a.ndim == 2 else [a[c] for c in range(a.shape[0])]


def merge_channels(channels) -> np.ndarray:
    chans = list(channels)
    return chans[0] if len(chans) == 1 else np.stack(chans)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def save_json(obj, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def load_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise UserInputError(f"JSON file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UserInputError(f"{path}: invalid JSON ({exc})") from exc


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(["" if (isinstance(v, float) and math.isnan(v)) else v for v in row])


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def remove_hot_pixels(img, threshold: float = 5.0) -> np.ndarray:
    """Replace isolated outliers by the median of their eight neighbours.

    A pixel is hot when it exceeds that median by more than ``threshold``
    robust standard deviations of the image-wide residual.  The centre is left
    out of its own median so the residual of a pure-noise pixel is not pulled
    towards zero, which would shrink the robust spread.
    """
    a = np.asarray(img, dtype=float)
    ring = np.ones((3, 3), bool)
    ring[1, 1] = False
    med = ndimage.median_filter(a, footprint=ring, mode="nearest")
    resid = a - med
    sigma = 1.4826 * np.median(np.abs(resid - np.median(resid)))
    if sigma == 0:
        sigma = np.finfo(float).tiny
    out = a.copy()
    hot = resid > threshold * sigma
    out[hot] = med[hot]
    return out


def ensure_writable_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UserInputError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise UserInputError(f"output directory is not writable: {path}")
    return path
