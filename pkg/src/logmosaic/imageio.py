"""PGM/PNG ingestion and export for rasters and masks."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .image_core import Raster, RegionMask, to_luminance


class ImageFormatError(ValueError):
    """File exists but cannot be decoded as a supported image."""


_PGM_HEADER = re.compile(rb"P5(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)"
                         rb"(?:\s|#[^\n]*\n)+(\d+)\s")


def read_pgm(path) -> np.ndarray:
    """Decode a binary (P5) PGM with maxval <= 255 into a uint8 array."""
    data = Path(path).read_bytes()
    m = _PGM_HEADER.match(data)
    if m is None:
        raise ImageFormatError(f"{path}: not a binary P5 PGM")
    width, height, maxval = (int(g) for g in m.groups())
    if width < 1 or height < 1:
        raise ImageFormatError(f"{path}: empty image")
    if not 0 < maxval <= 255:
        raise ImageFormatError(f"{path}: only 8-bit PGM supported (maxval={maxval})")
    body = data[m.end():m.end() + width * height]
    if len(body) != width * height:
        raise ImageFormatError(f"{path}: truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, samples: np.ndarray) -> None:
    """Write an 8-bit P5 PGM; float input is rounded and clipped to 0..255."""
    arr = np.asarray(samples)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(arr).tobytes())


def _read_png(path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("RGB", "RGBA", "P", "CMYK", "YCbCr", "LA"):
                if im.mode == "LA":
                    return np.asarray(im.convert("L"), dtype=np.float64)
                return to_luminance(np.asarray(im.convert("RGB")))
            if im.mode in ("I;16", "I;16B", "I", "F"):
                return np.asarray(im, dtype=np.float64)
            return np.asarray(im.convert("L"), dtype=np.float64)
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc


def read_samples(path) -> np.ndarray:
    path = Path(path)
    head = path.read_bytes()[:2]
    if head == b"P5":
        return read_pgm(path).astype(np.float64)
    return _read_png(path)


def read_raster(path) -> Raster:
    return Raster(read_samples(path))


def read_mask(path) -> RegionMask:
    """Mask image: any sample > 0 is valid."""
    return RegionMask(read_samples(path) > 0)


def write_image(path, samples: np.ndarray) -> None:
    """Write PGM or PNG depending on the suffix."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        arr = np.clip(np.rint(np.asarray(samples, dtype=np.float64)), 0, 255).astype(np.uint8)
        Image.fromarray(arr).save(path)
    else:
        write_pgm(path, samples)
