"""Normalized cross-correlation and logarithmic (cross) template search."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .image_core import Raster, ValidityMap

# sum of squared deviations per sample below which a patch counts as flat
FLAT_VARIANCE = 1e-10


class SearchError(RuntimeError):
    """A single landmark search could not produce a match."""


class NoValidStartError(SearchError):
    pass


class SearchDivergedError(SearchError):
    pass


class FlatTemplateError(SearchError):
    """Reference template has zero variance, or no probe had a defined score."""


class Neighborhood(str, Enum):
    CROSS5 = "cross5"
    SQUARE9 = "square9"

    @property
    def size(self) -> int:
        return 5 if self is Neighborhood.CROSS5 else 9


@dataclass(frozen=True)
class TemplateSpec:
    half_extent: int = 7

    def __post_init__(self):
        if int(self.half_extent) != self.half_extent or self.half_extent < 1:
            raise ValueError("template half_extent must be an integer >= 1")

    @property
    def size(self) -> int:
        return 2 * self.half_extent + 1


@dataclass(frozen=True)
class SearchConfig:
    w_init: int = 16
    neighborhood: Neighborhood = Neighborhood.CROSS5
    max_probes: int = 500
    # optional Chebyshev bound on |position - start|; None leaves the search unbounded
    max_radius: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "neighborhood", Neighborhood(self.neighborhood))
        w = self.w_init
        if int(w) != w or w < 2 or (w & (w - 1)) != 0:
            raise ValueError(f"w_init must be a power of two >= 2, got {w}")
        floor = self.neighborhood.size * (int(math.log2(w)) + 1)
        if self.max_probes < floor:
            raise ValueError(f"max_probes must be >= {floor} for w_init={w}")
        if self.max_radius is not None and self.max_radius < 0:
            raise ValueError("max_radius must be >= 0")

    def probe_bound(self, shifts: int) -> int:
        """Worst-case NCC evaluations for a run with ``shifts`` relocations."""
        k = self.neighborhood.size
        return k * (int(math.log2(self.w_init)) + shifts) + k


@dataclass(frozen=True)
class MatchResult:
    u: int
    v: int
    score: float
    probes: int
    shifts: int


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Normalized cross-correlation of two equally shaped patches.

    Returns ``-inf`` when either patch has zero variance, so an undefined
    score can never win an argmax. Defined scores are clamped to [-1, 1].
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"patch shapes differ: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ValueError("patches need at least 2 samples")
    a0 = a - a.mean()
    b0 = b - b.mean()
    sa = np.sum(a0 * a0)
    sb = np.sum(b0 * b0)
    if sa <= FLAT_VARIANCE * a.size or sb <= FLAT_VARIANCE * b.size:
        return -math.inf
    r = np.sum(a0 * b0) / math.sqrt(sa * sb)
    return float(min(1.0, max(-1.0, r)))


def probe_offsets(neighborhood: Neighborhood, w: int) -> list[tuple[int, int]]:
    """Probe order; the centre comes first so it wins ties."""
    offs = [(0, 0), (w, 0), (0, w), (-w, 0), (0, -w)]
    if Neighborhood(neighborhood) is Neighborhood.SQUARE9:
        offs += [(w, w), (-w, w), (-w, -w), (w, -w)]
    return offs


def extract_patch(samples: np.ndarray, x: int, y: int, half: int) -> np.ndarray:
    return samples[y - half:y + half + 1, x - half:x + half + 1]


def template_fits(shape, x: int, y: int, half: int) -> bool:
    h, w = shape
    return half <= x < w - half and half <= y < h - half


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


class _PreparedTemplate:
    __slots__ = ("a0", "sa", "n")

    def __init__(self, patch: np.ndarray):
        self.n = patch.size
        self.a0 = (patch - patch.mean()).ravel()
        self.sa = float(self.a0 @ self.a0)

    @property
    def flat(self) -> bool:
        return self.sa <= FLAT_VARIANCE * self.n

    def score(self, patch: np.ndarray) -> float:
        b0 = patch.ravel() - patch.mean()
        sb = float(b0 @ b0)
        if sb <= FLAT_VARIANCE * self.n:
            return -math.inf
        r = float(self.a0 @ b0) / math.sqrt(self.sa * sb)
        return min(1.0, max(-1.0, r))


def log_search(reference: Raster, obj: Raster, landmark: tuple[int, int],
               start_displacement: tuple[float, float], template: TemplateSpec,
               config: SearchConfig, valid: ValidityMap) -> MatchResult:
    """Logarithmic search for ``landmark``'s template inside ``obj``.

    The cross (or 3x3 square) of arm length ``w`` is probed around the
    current centre; the centre moves to a strictly better probe, otherwise
    ``w`` is halved. The ring at ``w = 1`` is always probed before stopping,
    so the result is a local maximum at pixel resolution. Positions not
    marked in ``valid`` (or beyond ``config.max_radius`` of the start) are
    never read and score ``-inf``.
    """
    half = template.half_extent
    x, y = int(landmark[0]), int(landmark[1])
    if not template_fits(reference.shape, x, y, half):
        raise NoValidStartError(f"reference template at {landmark} leaves the image")
    if valid.half_extent != half:
        raise ValueError("validity map was eroded for a different template size")
    prepared = _PreparedTemplate(extract_patch(reference.samples, x, y, half))
    if prepared.flat:
        raise FlatTemplateError(f"reference template at {landmark} has zero variance")

    obj_samples = obj.samples
    vmask = valid.valid
    vh, vw = vmask.shape
    memo: dict[tuple[int, int], float] = {}
    probes = 0

    u = round_half_up(x + start_displacement[0])
    v = round_half_up(y + start_displacement[1])
    u0, v0 = u, v
    radius = config.max_radius

    def score_at(px: int, py: int) -> float:
        nonlocal probes
        key = (px, py)
        if key in memo:
            return memo[key]
        inside = radius is None or (abs(px - u0) <= radius and abs(py - v0) <= radius)
        if inside and 0 <= px < vw and 0 <= py < vh and vmask[py, px]:
            probes += 1
            s = prepared.score(extract_patch(obj_samples, px, py, half))
        else:
            s = -math.inf
        memo[key] = s
        return s

    w = config.w_init
    shifts = 0
    first_ring = True
    while w >= 1:
        best = (u, v)
        best_score = score_at(u, v)
        for du, dv in probe_offsets(config.neighborhood, w)[1:]:
            s = score_at(u + du, v + dv)
            if s > best_score:
                best, best_score = (u + du, v + dv), s
        if first_ring:
            first_ring = False
            if probes == 0:
                raise NoValidStartError(f"no valid probe around start ({u}, {v})")
        if probes > config.max_probes:
            raise SearchDivergedError(f"exceeded {config.max_probes} probes")
        if best == (u, v):
            w //= 2
        else:
            u, v = best
            shifts += 1

    final = memo[(u, v)]
    if final == -math.inf:
        raise FlatTemplateError(f"no probe with a defined correlation for landmark {landmark}")
    return MatchResult(u=u, v=v, score=final, probes=probes, shifts=shifts)
