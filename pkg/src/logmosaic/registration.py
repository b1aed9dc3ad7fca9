"""Landmark-based frame registration (pseudo motion with logarithmic search).

One call of :func:`register` performs exactly two least-squares fits:

1. every landmark is relocated in the object frame by :func:`log_search`,
   seeded with the initial motion evaluated at that landmark;
2. matches are sorted by correlation; those among the top ``ceil(a_min*N)``
   OR with ``C_L >= c_min`` survive and get a first affine fit;
3. survivors are ranked by their distance to that fit; the top
   ``ceil(a_min*N)`` OR those closer than ``e_max`` survive and the final
   affine fit uses exactly them.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from . import affine
from .affine import AffineMotion, DegenerateGeometryError, InsufficientDataError, evaluate
from .image_core import Raster, RegionMask, ValidityMap, check_same_shape, erode_for_template
from .kourogi import InitializationFailedError, KourogiConfig, KourogiResult, kourogi_iterate
from .matching import SearchConfig, SearchError, TemplateSpec, log_search

logger = logging.getLogger(__name__)

# local variance (luminance^2) at or below which a template counts as flat
FLAT_TEMPLATE_VARIANCE = 1e-8


class InsufficientAreaError(ValueError):
    pass


class RegistrationFailedError(RuntimeError):
    """Too few reliable matches (or degenerate geometry) to estimate a motion."""

    def __init__(self, message: str, result: "RegistrationResult | None" = None,
                 fits: int = 0):
        super().__init__(message)
        self.result = result
        self.fits = fits


class InitMode(str, Enum):
    ZERO = "zero"
    PREVIOUS = "previous"
    KOUROGI = "kourogi"


class LandmarkLayout(str, Enum):
    GRID = "grid"
    GRID_JITTERED = "grid_jittered"


@dataclass(frozen=True)
class RegistrationConfig:
    n_landmarks: int = 16
    c_min: float = 0.7
    a_min: float = 0.5
    e_max: float = 2.0
    init_mode: InitMode = InitMode.KOUROGI
    template: TemplateSpec = field(default_factory=TemplateSpec)
    search: SearchConfig = field(default_factory=SearchConfig)
    landmark_layout: LandmarkLayout = LandmarkLayout.GRID
    seed: int = 0
    kourogi: KourogiConfig = field(default_factory=KourogiConfig)

    def __post_init__(self):
        object.__setattr__(self, "init_mode", InitMode(self.init_mode))
        object.__setattr__(self, "landmark_layout", LandmarkLayout(self.landmark_layout))
        if self.n_landmarks < 3:
            raise ValueError("need at least 3 landmarks")
        if not 0 < self.a_min <= 1:
            raise ValueError("a_min must lie in (0, 1]")
        if self.a_min * self.n_landmarks < 3 - 1e-9:
            raise ValueError("a_min * N must be >= 3 so the final fit is determined")
        if not self.e_max > 0:
            raise ValueError("e_max must be > 0")
        if not -1 <= self.c_min <= 1:
            raise ValueError("c_min must lie in [-1, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["init_mode"] = self.init_mode.value
        d["landmark_layout"] = self.landmark_layout.value
        d["search"]["neighborhood"] = self.search.neighborhood.value
        d["kourogi"]["model"] = self.kourogi.model.value
        return d


def min_keep(a_min: float, n: int) -> int:
    """``ceil(a_min * n)``, robust to float noise such as ``0.3 * 10``."""
    return int(math.ceil(a_min * n - 1e-9))


@dataclass
class MatchRecord:
    index: int
    landmark: tuple[int, int]
    displacement: Optional[tuple[float, float]] = None
    score: Optional[float] = None
    probes: int = 0
    shifts: int = 0
    residual: Optional[float] = None
    stage1_pass: bool = False
    stage2_pass: bool = False
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.displacement is not None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "landmark": list(self.landmark),
            "displacement": list(self.displacement) if self.displacement else None,
            "score": self.score,
            "probes": self.probes,
            "shifts": self.shifts,
            "residual": self.residual,
            "stage1_pass": self.stage1_pass,
            "stage2_pass": self.stage2_pass,
            "error": self.error,
        }


@dataclass
class InitOutcome:
    motion: AffineMotion
    mode: InitMode
    fallback: bool = False
    message: str = ""
    kourogi: Optional[KourogiResult] = None


@dataclass
class RegistrationResult:
    motion: AffineMotion
    matches: list[MatchRecord]
    init_motion: AffineMotion
    stage1_motion: Optional[AffineMotion] = None
    init: Optional[InitOutcome] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def accepted(self) -> list[MatchRecord]:
        return [m for m in self.matches if m.stage2_pass]


# ---------------------------------------------------------------- filtering

def stage1_filter(scores: Sequence[float], k: int, c_min: float) -> list[int]:
    """Positions kept by the correlation stage: top ``k`` by score OR score >= c_min.

    Ties in the ranking keep input order (stable sort).
    """
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    top = set(order[:k])
    return [i for i in range(len(scores)) if i in top or scores[i] >= c_min]


def stage2_filter(residuals: Sequence[float], k: int, e_max: float) -> list[int]:
    """Positions kept by the outlier stage: top ``k`` by smallest residual OR residual < e_max."""
    order = sorted(range(len(residuals)), key=lambda i: residuals[i])
    top = set(order[:k])
    return [i for i in range(len(residuals)) if i in top or residuals[i] < e_max]


def _fit(records: Sequence[MatchRecord]) -> AffineMotion:
    # looked up through the module so instrumentation can count calls
    return affine.fit_affine_arrays([r.landmark[0] for r in records],
                                    [r.landmark[1] for r in records],
                                    [r.displacement[0] for r in records],
                                    [r.displacement[1] for r in records])


@dataclass
class TwoStageOutcome:
    motion: AffineMotion
    stage1_motion: AffineMotion
    stage1: list[int]
    stage2: list[int]
    fits: int


def two_stage_fit(records: list[MatchRecord], config: RegistrationConfig,
                  n_landmarks: int | None = None) -> TwoStageOutcome:
    """Filter ``records`` in place (pass flags, residuals) and fit the motion.

    Failed searches never enter the ranking. Raises
    :class:`RegistrationFailedError` if a fit is impossible.
    """
    n = len(records) if n_landmarks is None else n_landmarks
    k = min_keep(config.a_min, n)
    for r in records:
        r.stage1_pass = r.stage2_pass = False
        r.residual = None
    usable = [r for r in records if r.ok]
    fits = 0

    keep1 = stage1_filter([r.score for r in usable], k, config.c_min)
    m1 = [usable[i] for i in keep1]
    for r in m1:
        r.stage1_pass = True
    try:
        fits += 1
        stage1_motion = _fit(m1)
    except (InsufficientDataError, DegenerateGeometryError) as exc:
        raise RegistrationFailedError(f"stage-1 fit: {exc}", fits=fits) from exc

    xs = np.array([r.landmark[0] for r in m1], dtype=np.float64)
    ys = np.array([r.landmark[1] for r in m1], dtype=np.float64)
    uc, vc = evaluate(stage1_motion, xs, ys)
    res = np.hypot(np.array([r.displacement[0] for r in m1]) - uc,
                   np.array([r.displacement[1] for r in m1]) - vc)
    for r, e in zip(m1, res):
        r.residual = float(e)
    keep2 = stage2_filter(res.tolist(), k, config.e_max)
    m2 = [m1[i] for i in keep2]
    for r in m2:
        r.stage2_pass = True
    try:
        fits += 1
        motion = _fit(m2)
    except (InsufficientDataError, DegenerateGeometryError) as exc:
        raise RegistrationFailedError(f"final fit: {exc}", fits=fits) from exc
    return TwoStageOutcome(motion, stage1_motion,
                           [r.index for r in m1], [r.index for r in m2], fits)


# ---------------------------------------------------------------- landmarks

def textured_map(reference: Raster, half_extent: int) -> np.ndarray:
    """True where the (2h+1)^2 reference patch centred there has nonzero variance."""
    size = 2 * max(half_extent, 1) + 1
    s = reference.samples
    mean = ndimage.uniform_filter(s, size=size, mode="nearest")
    mean2 = ndimage.uniform_filter(s * s, size=size, mode="nearest")
    return (mean2 - mean * mean) > FLAT_TEMPLATE_VARIANCE


def _tile_grid(n: int, bw: float, bh: float) -> tuple[int, int]:
    nx = max(1, int(round(math.sqrt(n * bw / bh))))
    nx = min(nx, n)
    ny = int(math.ceil(n / nx))
    return nx, ny


def place_landmarks(valid: ValidityMap, n: int,
                    layout: LandmarkLayout = LandmarkLayout.GRID,
                    reference: Raster | None = None, seed: int = 0) -> list[tuple[int, int]]:
    """Spread ``n`` landmarks over the valid region on an approximately square tiling.

    Each tile centre snaps to the nearest free valid position. When a
    ``reference`` is given and the snapped template is flat, the landmark
    moves to the nearest textured valid position inside its tile, or is
    dropped (with a warning) when the tile has none.
    """
    layout = LandmarkLayout(layout)
    pos = valid.positions()
    if len(pos) < n:
        raise InsufficientAreaError(f"{len(pos)} valid positions for {n} landmarks")
    xmin, ymin = pos.min(axis=0)
    xmax, ymax = pos.max(axis=0)
    bw, bh = float(xmax - xmin + 1), float(ymax - ymin + 1)
    nx, ny = _tile_grid(n, bw, bh)
    cells = [(i, j) for j in range(ny) for i in range(nx)]
    if len(cells) > n:
        pick = np.round(np.linspace(0, len(cells) - 1, n)).astype(int)
        cells = [cells[p] for p in pick]
    tw, th = bw / nx, bh / ny
    rng = np.random.default_rng(seed) if layout is LandmarkLayout.GRID_JITTERED else None

    textured = None
    if reference is not None:
        tex = textured_map(reference, valid.half_extent)
        textured = tex[pos[:, 1], pos[:, 0]]
    taken = np.zeros(len(pos), dtype=bool)
    px = pos[:, 0].astype(np.float64)
    py = pos[:, 1].astype(np.float64)

    out: list[tuple[int, int]] = []
    for i, j in cells:
        cx = xmin + (i + 0.5) * tw
        cy = ymin + (j + 0.5) * th
        if rng is not None:
            cx += rng.uniform(-0.25, 0.25) * tw
            cy += rng.uniform(-0.25, 0.25) * th
        d2 = (px - cx) ** 2 + (py - cy) ** 2
        d2[taken] = np.inf
        best = int(np.argmin(d2))
        if not np.isfinite(d2[best]):
            break
        if textured is not None and not textured[best]:
            x0, x1 = xmin + i * tw, xmin + (i + 1) * tw
            y0, y1 = ymin + j * th, ymin + (j + 1) * th
            in_tile = (px >= x0) & (px < x1) & (py >= y0) & (py < y1) & textured
            d2 = np.where(in_tile, d2, np.inf)
            best = int(np.argmin(d2))
            if not np.isfinite(d2[best]):
                logger.warning("dropping landmark for tile (%d, %d): no textured position", i, j)
                continue
        taken[best] = True
        out.append((int(pos[best, 0]), int(pos[best, 1])))
    return out


# ----------------------------------------------------------- initialisation

def initialize_motion(prev_result: RegistrationResult | None, reference: Raster, obj: Raster,
                      mask: RegionMask, config: RegistrationConfig) -> InitOutcome:
    mode = config.init_mode
    if mode is InitMode.ZERO:
        return InitOutcome(AffineMotion.zero(), mode)
    if mode is InitMode.PREVIOUS:
        if prev_result is None:
            return InitOutcome(AffineMotion.zero(), mode, fallback=True,
                               message="no previous result; starting from zero motion")
        return InitOutcome(prev_result.motion, mode)
    try:
        kr = kourogi_iterate(reference, obj, mask, config.kourogi)
    except InitializationFailedError as exc:
        logger.info("kourogi initialisation failed (%s); starting from zero motion", exc)
        return InitOutcome(AffineMotion.zero(), mode, fallback=True, message=str(exc))
    return InitOutcome(kr.motion, mode, kourogi=kr)


# ------------------------------------------------------------- registration

def _search_landmark(index: int, lm: tuple[int, int], init: AffineMotion, reference: Raster,
                     obj: Raster, config: RegistrationConfig,
                     obj_valid: ValidityMap) -> MatchRecord:
    rec = MatchRecord(index=index, landmark=lm)
    start = evaluate(init, lm[0], lm[1])
    try:
        res = log_search(reference, obj, lm, start, config.template, config.search, obj_valid)
    except SearchError as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        return rec
    rec.displacement = (float(res.u - lm[0]), float(res.v - lm[1]))
    rec.score = res.score
    rec.probes = res.probes
    rec.shifts = res.shifts
    return rec


def register(reference: Raster, obj: Raster, mask: RegionMask,
             config: RegistrationConfig = RegistrationConfig(),
             prev: RegistrationResult | None = None,
             object_mask: RegionMask | None = None,
             threads: int = 1) -> RegistrationResult:
    """Estimate the affine motion taking ``reference`` coordinates to ``obj`` coordinates."""
    if reference.shape != obj.shape:
        raise ValueError("reference and object differ in size")
    check_same_shape(reference, mask)
    obj_mask = object_mask if object_mask is not None else mask
    check_same_shape(obj, obj_mask)
    timings = {}

    t0 = time.perf_counter()
    init = initialize_motion(prev, reference, obj, mask, config)
    timings["init_ms"] = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    half = config.template.half_extent
    ref_valid = erode_for_template(mask, half)
    obj_valid = ref_valid if obj_mask is mask else erode_for_template(obj_mask, half)
    landmarks = place_landmarks(ref_valid, config.n_landmarks, config.landmark_layout,
                                reference=reference, seed=config.seed)

    def run(item):
        i, lm = item
        return _search_landmark(i, lm, init.motion, reference, obj, config, obj_valid)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(run, enumerate(landmarks)))
    else:
        records = [run(item) for item in enumerate(landmarks)]
    timings["search_ms"] = (time.perf_counter() - t0) * 1e3

    diagnostics = {
        "landmarks": len(landmarks),
        "searches_failed": sum(not r.ok for r in records),
        "probes": sum(r.probes for r in records),
        "shifts": sum(r.shifts for r in records),
        "init_fallback": init.fallback,
        "kourogi_iterations": init.kourogi.iterations if init.kourogi else 0,
        "kourogi_accepted": list(init.kourogi.accepted_counts) if init.kourogi else [],
        "fits": 0,
        "stage1_survivors": 0,
        "stage2_survivors": 0,
    }
    result = RegistrationResult(motion=AffineMotion.zero(), matches=records,
                                init_motion=init.motion, init=init, diagnostics=diagnostics)

    t0 = time.perf_counter()
    try:
        outcome = two_stage_fit(records, config, n_landmarks=len(landmarks))
    except RegistrationFailedError as exc:
        diagnostics["fits"] = exc.fits
        diagnostics["stage1_survivors"] = sum(r.stage1_pass for r in records)
        diagnostics["stage2_survivors"] = sum(r.stage2_pass for r in records)
        timings["fit_ms"] = (time.perf_counter() - t0) * 1e3
        diagnostics["timings"] = timings
        exc.result = result
        raise
    timings["fit_ms"] = (time.perf_counter() - t0) * 1e3
    diagnostics["fits"] = outcome.fits
    diagnostics["stage1_survivors"] = len(outcome.stage1)
    diagnostics["stage2_survivors"] = len(outcome.stage2)
    diagnostics["timings"] = timings
    result.motion = outcome.motion
    result.stage1_motion = outcome.stage1_motion
    return result
