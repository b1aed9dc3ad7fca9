"""Raster and mask primitives shared by every stage of the pipeline.

Coordinates follow the image convention used throughout the package:
``x`` is the column index, ``y`` the row index, and arrays are indexed
``samples[y, x]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


class ImageDomainError(ValueError):
    """A coordinate or pixel lies outside the domain an operation supports."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Raster:
    """Single-channel luminance image stored as float64, row-major."""

    samples: np.ndarray

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"raster must be a non-empty 2-D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("raster samples must be finite")
        object.__setattr__(self, "samples", _frozen(arr))

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.samples.shape

    def __getitem__(self, key):
        return self.samples[key]


@dataclass(frozen=True, eq=False)
class RegionMask:
    """Boolean validity grid; True marks usable (e.g. endoscopic) pixels."""

    valid: np.ndarray

    def __post_init__(self):
        arr = np.array(self.valid, dtype=bool, copy=True)
        if arr.ndim != 2:
            raise ValueError("mask must be 2-D")
        object.__setattr__(self, "valid", _frozen(arr))

    @classmethod
    def full(cls, width: int, height: int) -> "RegionMask":
        return cls(np.ones((height, width), dtype=bool))

    @classmethod
    def circle(cls, width: int, height: int, radius: float | None = None) -> "RegionMask":
        if radius is None:
            radius = 0.48 * min(width, height)
        yy, xx = np.mgrid[0:height, 0:width]
        cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
        return cls((xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius)

    @property
    def width(self) -> int:
        return self.valid.shape[1]

    @property
    def height(self) -> int:
        return self.valid.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape

    def count(self) -> int:
        return int(self.valid.sum())


@dataclass(frozen=True, eq=False)
class ValidityMap:
    """Centre positions at which a square template of ``half_extent`` fits the mask."""

    valid: np.ndarray
    half_extent: int

    def __post_init__(self):
        arr = np.array(self.valid, dtype=bool, copy=True)
        object.__setattr__(self, "valid", _frozen(arr))

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape

    def contains(self, x: int, y: int) -> bool:
        h, w = self.valid.shape
        return 0 <= x < w and 0 <= y < h and bool(self.valid[y, x])

    def positions(self) -> np.ndarray:
        """All valid centres as an ``(n, 2)`` array of ``(x, y)``."""
        ys, xs = np.nonzero(self.valid)
        return np.stack([xs, ys], axis=1)

    def count(self) -> int:
        return int(self.valid.sum())


def check_same_shape(raster: Raster, mask: RegionMask) -> None:
    if raster.shape != mask.shape:
        raise ValueError(f"mask shape {mask.shape} does not match raster shape {raster.shape}")


def sample_bilinear(img: Raster, x: float, y: float) -> float:
    """Bilinear interpolation of ``img`` at a real-valued position."""
    h, w = img.shape
    if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
        raise ImageDomainError(f"({x}, {y}) outside [0, {w - 1}] x [0, {h - 1}]")
    x0 = min(int(math.floor(x)), max(w - 2, 0))
    y0 = min(int(math.floor(y)), max(h - 2, 0))
    fx = x - x0
    fy = y - y0
    s = img.samples
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    top = (1.0 - fx) * s[y0, x0] + fx * s[y0, x1]
    bottom = (1.0 - fx) * s[y1, x0] + fx * s[y1, x1]
    return float((1.0 - fy) * top + fy * bottom)


def bilinear_masked(samples: np.ndarray, valid: np.ndarray | None,
                    xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised bilinear sampling that never reads invalid pixels.

    Returns ``(values, ok)``. A position is ``ok`` when it is in bounds and
    every corner carrying a nonzero weight is mask-valid; ``values`` is 0
    where not ok.
    """
    h, w = samples.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    inb = (xs >= 0.0) & (xs <= w - 1) & (ys >= 0.0) & (ys <= h - 1)
    xc = np.where(inb, xs, 0.0)
    yc = np.where(inb, ys, 0.0)
    x0 = np.minimum(np.floor(xc).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    w00 = (1.0 - fx) * (1.0 - fy)
    w01 = fx * (1.0 - fy)
    w10 = (1.0 - fx) * fy
    w11 = fx * fy
    # flat gathers are much cheaper than 2-D fancy indexing
    i00 = y0 * w + x0
    i01 = y0 * w + x1
    i10 = y1 * w + x0
    i11 = y1 * w + x1
    ok = inb
    if valid is not None and not valid.all():
        flat = valid.ravel()
        ok = ok & ((w00 == 0) | flat.take(i00)) & ((w01 == 0) | flat.take(i01))
        ok = ok & ((w10 == 0) | flat.take(i10)) & ((w11 == 0) | flat.take(i11))
    src = np.ascontiguousarray(samples).ravel()
    vals = (w00 * src.take(i00) + w01 * src.take(i01)
            + w10 * src.take(i10) + w11 * src.take(i11))
    return np.where(ok, vals, 0.0), ok


def gradient_central(img: Raster, x: int, y: int) -> tuple[float, float]:
    """Central-difference gradient ``(Ix, Iy)`` at an interior pixel."""
    h, w = img.shape
    if not (1 <= x <= w - 2 and 1 <= y <= h - 2):
        raise ImageDomainError(f"gradient undefined at border pixel ({x}, {y})")
    s = img.samples
    return (float((s[y, x + 1] - s[y, x - 1]) / 2.0),
            float((s[y + 1, x] - s[y - 1, x]) / 2.0))


def gradient_field(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences over the whole grid; border rows/columns are 0."""
    gx = np.zeros_like(samples, dtype=np.float64)
    gy = np.zeros_like(samples, dtype=np.float64)
    gx[:, 1:-1] = (samples[:, 2:] - samples[:, :-2]) / 2.0
    gy[1:-1, :] = (samples[2:, :] - samples[:-2, :]) / 2.0
    return gx, gy


def erode_for_template(mask: RegionMask, half_extent: int) -> ValidityMap:
    """Square (Chebyshev) erosion: centres whose whole footprint is valid and in bounds."""
    if half_extent < 0:
        raise ValueError("half_extent must be >= 0")
    if half_extent == 0:
        return ValidityMap(mask.valid, 0)
    size = 2 * half_extent + 1
    eroded = ndimage.minimum_filter(mask.valid.astype(np.uint8), size=size,
                                    mode="constant", cval=0)
    return ValidityMap(eroded.astype(bool), half_extent)


def to_luminance(rgb: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma from an ``(h, w, 3)`` array."""
    rgb = np.asarray(rgb, dtype=np.float64)
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
