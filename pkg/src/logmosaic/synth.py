"""Synthetic ground-truth sequences and brute-force oracles.

Frames are rendered from one oversized base texture through the chained
ground-truth motion, so frame ``k+1`` is frame ``k`` resampled through the
step motion without accumulating interpolation blur or empty borders.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .affine import AffineMotion, compose, invert
from .image_core import Raster, RegionMask, ValidityMap, bilinear_masked
from .imageio import write_pgm
from .matching import MatchResult, NoValidStartError, TemplateSpec, round_half_up


class Texture(str, Enum):
    SMOOTHED_NOISE = "smoothed_noise"
    CHECKER_BLURRED = "checker_blurred"
    BLOB_FIELD = "blob_field"


@dataclass(frozen=True)
class Illumination:
    """``I' = gain*I + offset + ramp``; the ramp spans ``±ramp*mean`` across the frame."""

    gain: float = 1.0
    offset: float = 0.0
    ramp: float = 0.0
    ramp_angle: float = 0.0  # radians, 0 = brightening towards +x

    def __post_init__(self):
        if self.gain <= 0:
            raise ValueError("gain must be > 0")

    @property
    def is_identity(self) -> bool:
        return self.gain == 1.0 and self.offset == 0.0 and self.ramp == 0.0


@dataclass(frozen=True)
class SynthSpec:
    width: int = 256
    height: int = 256
    texture: Texture = Texture.SMOOTHED_NOISE
    seed: int = 0
    motion_truth: AffineMotion | tuple[AffineMotion, ...] = field(default_factory=AffineMotion)
    illumination: Illumination = field(default_factory=Illumination)
    frame_count: int = 2
    circular_mask: bool = False
    # box-filter width for smoothed_noise (applied twice); a tuple sums one
    # unit-variance noise layer per width, giving a multi-scale texture
    smoothing: int | tuple[int, ...] = 5

    def __post_init__(self):
        object.__setattr__(self, "texture", Texture(self.texture))
        if self.width < 8 or self.height < 8:
            raise ValueError("synthetic frames must be at least 8x8")
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")
        if not isinstance(self.smoothing, int):
            object.__setattr__(self, "smoothing", tuple(int(w) for w in self.smoothing))
        if not isinstance(self.motion_truth, AffineMotion):
            steps = tuple(self.motion_truth)
            if len(steps) != self.frame_count - 1:
                raise ValueError("need one truth motion per step (frame_count - 1)")
            object.__setattr__(self, "motion_truth", steps)

    def step_motions(self) -> list[AffineMotion]:
        if isinstance(self.motion_truth, AffineMotion):
            return [self.motion_truth] * (self.frame_count - 1)
        return list(self.motion_truth)


class SynthFrame(NamedTuple):
    raster: Raster
    mask: RegionMask
    truth: AffineMotion  # step motion from the previous frame (zero for frame 0)


def _smoothed_noise(width: int, height: int, rng: np.random.Generator, size: int) -> np.ndarray:
    t = rng.standard_normal((height, width))
    for _ in range(2):
        t = ndimage.uniform_filter(t, size=size, mode="reflect")
    return (t - t.mean()) / t.std()


def make_texture(kind: Texture, width: int, height: int, rng: np.random.Generator,
                 smoothing: int | tuple[int, ...] = 5) -> np.ndarray:
    """Texture with mean 128 and standard deviation 40 (luminance units)."""
    kind = Texture(kind)
    if kind is Texture.SMOOTHED_NOISE:
        sizes = (smoothing,) if isinstance(smoothing, int) else smoothing
        t = sum(_smoothed_noise(width, height, rng, size) for size in sizes)
    elif kind is Texture.CHECKER_BLURRED:
        period = 16
        px, py = rng.integers(0, period, size=2)
        yy, xx = np.mgrid[0:height, 0:width]
        t = (((xx + px) // (period // 2) + (yy + py) // (period // 2)) % 2).astype(np.float64)
        t = ndimage.gaussian_filter(t, 2.0) + 0.05 * rng.standard_normal((height, width))
    else:
        t = np.zeros((height, width))
        n_blobs = max(8, width * height // 40)
        yy, xx = np.mgrid[0:height, 0:width]
        for cx, cy, r, amp in zip(rng.uniform(0, width, n_blobs), rng.uniform(0, height, n_blobs),
                                  rng.uniform(3, 10, n_blobs), rng.uniform(-1, 1, n_blobs)):
            x0, x1 = int(max(0, cx - 3 * r)), int(min(width, cx + 3 * r + 1))
            y0, y1 = int(max(0, cy - 3 * r)), int(min(height, cy + 3 * r + 1))
            d2 = (xx[y0:y1, x0:x1] - cx) ** 2 + (yy[y0:y1, x0:x1] - cy) ** 2
            t[y0:y1, x0:x1] += amp * np.exp(-d2 / (2 * r * r))
    t = (t - t.mean()) / t.std()
    return np.clip(128.0 + 40.0 * t, 0.0, 255.0)


def apply_illumination(samples: np.ndarray, illum: Illumination,
                       mean: float | None = None) -> np.ndarray:
    h, w = samples.shape
    if mean is None:
        mean = float(samples.mean())
    out = illum.gain * samples + illum.offset
    if illum.ramp:
        c, s = math.cos(illum.ramp_angle), math.sin(illum.ramp_angle)
        yy, xx = np.mgrid[0:h, 0:w]
        extent = abs(c) * (w - 1) + abs(s) * (h - 1)
        frac = ((xx - (w - 1) / 2.0) * c + (yy - (h - 1) / 2.0) * s) / extent
        out = out + illum.ramp * mean * 2.0 * frac
    return out


def chain_motions(steps: Sequence[AffineMotion]) -> list[AffineMotion]:
    """First-frame-to-frame-k motions, starting with the zero motion for frame 0."""
    chained = [AffineMotion.zero()]
    for step in steps:
        chained.append(compose(chained[-1], step))
    return chained


def generate_sequence(spec: SynthSpec) -> list[SynthFrame]:
    steps = spec.step_motions()
    chained = chain_motions(steps)
    w, h = spec.width, spec.height
    cx = np.array([0, w - 1, 0, w - 1], dtype=np.float64)
    cy = np.array([0, 0, h - 1, h - 1], dtype=np.float64)
    # bounding box, in frame-0 coordinates, of every frame's footprint
    xs, ys = [cx], [cy]
    for m in chained[1:]:
        bx, by = invert(m).map_points(cx, cy)
        xs.append(bx)
        ys.append(by)
    xs = np.concatenate(xs)
    ys = np.concatenate(ys)
    margin = 2
    ox = int(math.floor(xs.min())) - margin
    oy = int(math.floor(ys.min())) - margin
    bw = int(math.ceil(xs.max())) + margin - ox + 1
    bh = int(math.ceil(ys.max())) + margin - oy + 1

    rng = np.random.default_rng(spec.seed)
    base = make_texture(spec.texture, bw, bh, rng, spec.smoothing)
    if spec.circular_mask:
        mask = RegionMask.circle(w, h)
    else:
        mask = RegionMask.full(w, h)

    py, px = np.mgrid[0:h, 0:w].astype(np.float64)
    frames = []
    for k, m in enumerate(chained):
        if k == 0:
            img = base[-oy:-oy + h, -ox:-ox + w].copy()
        else:
            qx, qy = invert(m).map_points(px, py)
            img, ok = bilinear_masked(base, None, qx - ox, qy - oy)
            if not ok.all():
                raise RuntimeError("base texture does not cover a rendered frame")
            if not spec.illumination.is_identity:
                img = apply_illumination(img, spec.illumination)
        frames.append(SynthFrame(Raster(img), mask, steps[k - 1] if k else AffineMotion.zero()))
    return frames


def corner_error(estimated: AffineMotion, truth: AffineMotion, width: int, height: int) -> float:
    """Largest distance between the two mapped positions over the four image corners."""
    cx = np.array([0, width - 1, 0, width - 1], dtype=np.float64)
    cy = np.array([0, 0, height - 1, height - 1], dtype=np.float64)
    ex, ey = estimated.map_points(cx, cy)
    tx, ty = truth.map_points(cx, cy)
    return float(np.max(np.hypot(ex - tx, ey - ty)))


def ncc_surface(reference: Raster, obj: Raster, landmark: tuple[int, int],
                template: TemplateSpec, window_radius: int, valid: ValidityMap,
                start_displacement: tuple[float, float] = (0.0, 0.0)):
    """Correlation at every integer position within the window, ``-inf`` where invalid.

    Returns ``(surface, (u0, v0))`` with ``surface[dy + R, dx + R]`` the score at
    ``(u0 + dx, v0 + dy)``. Computed in one vectorised pass (direct windowed products plus
    integral-image patch sums), independently of the per-patch correlation
    used by the log search.
    """
    half = template.half_extent
    x, y = int(landmark[0]), int(landmark[1])
    a = reference.samples[y - half:y + half + 1, x - half:x + half + 1]
    a0 = a - a.mean()
    sa = np.sum(a0 * a0)
    u0 = round_half_up(x + start_displacement[0])
    v0 = round_half_up(y + start_displacement[1])
    R = window_radius
    n = 2 * R + 1
    surface = np.full((n, n), -np.inf)
    vmask = valid.valid
    H, W = vmask.shape
    ys0, ys1 = max(v0 - R, 0), min(v0 + R, H - 1)
    xs0, xs1 = max(u0 - R, 0), min(u0 + R, W - 1)
    if ys0 > ys1 or xs0 > xs1 or sa <= 1e-10 * a.size:
        return surface, (u0, v0)
    sub_valid = vmask[ys0:ys1 + 1, xs0:xs1 + 1]
    if not sub_valid.any():
        return surface, (u0, v0)
    # valid centres have their whole footprint in bounds, so the region
    # spanning the window plus the half-extent margin covers every patch
    py0, px0 = ys0 - half, xs0 - half
    if py0 < 0 or px0 < 0 or ys1 + half > H - 1 or xs1 + half > W - 1:
        iy, ix = np.nonzero(sub_valid)
        ys0, ys1 = ys0 + iy.min(), ys0 + iy.max()
        xs0, xs1 = xs0 + ix.min(), xs0 + ix.max()
        sub_valid = vmask[ys0:ys1 + 1, xs0:xs1 + 1]
        py0, px0 = ys0 - half, xs0 - half
    k = 2 * half + 1
    region = obj.samples[py0:ys1 + half + 1, px0:xs1 + half + 1]
    # a0 sums to zero, so correlating it with raw patches gives the centred numerator
    num = np.einsum("yxij,ij->yx", sliding_window_view(region, (k, k)), a0)
    n_pix = float(k * k)
    s1 = _box_sums(region, k)
    s2 = _box_sums(region * region, k)
    sb = np.maximum(s2 - s1 * s1 / n_pix, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.clip(num / np.sqrt(sa * sb), -1.0, 1.0)
    scores[(sb <= 1e-10 * n_pix) | ~sub_valid] = -np.inf
    surface[ys0 - (v0 - R):ys1 - (v0 - R) + 1, xs0 - (u0 - R):xs1 - (u0 - R) + 1] = scores
    return surface, (u0, v0)


def _box_sums(arr: np.ndarray, k: int) -> np.ndarray:
    """Sums over every ``k x k`` window (valid positions only)."""
    c = np.zeros((arr.shape[0] + 1, arr.shape[1] + 1))
    c[1:, 1:] = arr.cumsum(axis=0).cumsum(axis=1)
    return c[k:, k:] - c[:-k, k:] - c[k:, :-k] + c[:-k, :-k]


def _surface_argmax(surface: np.ndarray) -> tuple[int, int] | None:
    """Argmax with the window centre winning ties, then row-major order."""
    n = surface.shape[0]
    R = n // 2
    best = surface.max()
    if best == -np.inf:
        return None
    if surface[R, R] == best:
        return R, R
    iy, ix = np.argwhere(surface == best)[0]
    return int(iy), int(ix)


def match_from_surface(surface: np.ndarray, origin: tuple[int, int]) -> MatchResult:
    """Oracle result from a surface computed by :func:`ncc_surface`."""
    hit = _surface_argmax(surface)
    if hit is None:
        raise NoValidStartError(f"no scorable position in window around {origin}")
    iy, ix = hit
    R = surface.shape[0] // 2
    return MatchResult(u=origin[0] + ix - R, v=origin[1] + iy - R,
                       score=float(surface[iy, ix]),
                       probes=int(np.count_nonzero(surface > -np.inf)), shifts=0)


def exhaustive_match(reference: Raster, obj: Raster, landmark: tuple[int, int],
                     template: TemplateSpec, window_radius: int, valid: ValidityMap,
                     start_displacement: tuple[float, float] = (0.0, 0.0)) -> MatchResult:
    """Naive full-window template search; the correctness oracle for log search.

    ``probes`` counts the scored window positions (valid positions whose
    object patch has nonzero variance).
    """
    surface, origin = ncc_surface(reference, obj, landmark, template, window_radius,
                                  valid, start_displacement)
    return match_from_surface(surface, origin)


def count_local_maxima(surface: np.ndarray) -> int:
    """4-connected local maxima (``>=`` every finite neighbour) among finite entries."""
    finite = np.isfinite(surface)
    padded = np.pad(surface, 1, constant_values=-np.inf)
    c = padded[1:-1, 1:-1]
    is_max = finite.copy()
    for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        nb = padded[1 + dy:padded.shape[0] - 1 + dy, 1 + dx:padded.shape[1] - 1 + dx]
        is_max &= c >= nb
    return int(is_max.sum())


def is_unimodal(surface: np.ndarray) -> bool:
    return count_local_maxima(surface) == 1


def export_sequence(frames: Sequence[SynthFrame], directory, prefix: str = "frame") -> Path:
    """Write numbered PGM frames, ``mask.pgm`` and a ``truth.json`` sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for k, fr in enumerate(frames):
        name = f"{prefix}_{k:04d}.pgm"
        write_pgm(directory / name, fr.raster.samples)
        names.append(name)
    write_pgm(directory / "mask.pgm", frames[0].mask.valid.astype(np.uint8) * 255)
    steps = [fr.truth for fr in frames[1:]]
    sidecar = {
        "version": 1,
        "width": frames[0].raster.width,
        "height": frames[0].raster.height,
        "frames": names,
        "steps": [list(m.params) for m in steps],
        "chained": [list(m.params) for m in chain_motions(steps)],
    }
    path = directory / "truth.json"
    path.write_text(json.dumps(sidecar, indent=2))
    return path


def load_truth(path) -> dict:
    data = json.loads(Path(path).read_text())
    data["steps"] = [AffineMotion.from_params(p) for p in data["steps"]]
    data["chained"] = [AffineMotion.from_params(p) for p in data["chained"]]
    return data
