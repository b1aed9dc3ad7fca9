"""Chaining frame-to-frame motions and compositing frames into one canvas.

Canvas coordinates are the first frame's coordinates shifted by an integer
origin: canvas pixel ``[r, c]`` sits at first-frame position
``(c + origin_x, r + origin_y)``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .affine import AffineMotion, compose, evaluate, invert
from .image_core import Raster, RegionMask, bilinear_masked, check_same_shape
from .registration import (InsufficientAreaError, RegistrationConfig, RegistrationFailedError,
                           RegistrationResult, register)

logger = logging.getLogger(__name__)


class CompositePolicy(str, Enum):
    LAST = "last"
    FIRST = "first"
    MEAN = "mean"


class FrameStatus(str, Enum):
    OK = "ok"
    FAILED = "failed"
    SKIPPED = "skipped"


@dataclass
class MosaicCanvas:
    values: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    count: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.int64))
    origin: tuple[int, int] = (0, 0)
    motion: AffineMotion = field(default_factory=AffineMotion)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def defined(self) -> np.ndarray:
        return self.count > 0

    def bounds(self) -> tuple[int, int, int, int]:
        """``(x0, y0, x1, y1)`` in first-frame coordinates, end-exclusive."""
        h, w = self.values.shape
        ox, oy = self.origin
        return ox, oy, ox + w, oy + h

    def export(self, fill: float = 0.0) -> np.ndarray:
        """Luminance with undefined pixels set to ``fill``."""
        return np.where(self.defined, self.values, fill)

    def coverage(self) -> np.ndarray:
        """255 where defined, 0 elsewhere."""
        return np.where(self.defined, 255, 0).astype(np.uint8)

    def grow_to(self, x0: int, y0: int, x1: int, y1: int) -> None:
        """Enlarge so the end-exclusive box is covered; existing pixels are only moved."""
        if self.values.size == 0:
            self.values = np.zeros((y1 - y0, x1 - x0))
            self.count = np.zeros((y1 - y0, x1 - x0), dtype=np.int64)
            self.origin = (x0, y0)
            return
        cx0, cy0, cx1, cy1 = self.bounds()
        nx0, ny0 = min(x0, cx0), min(y0, cy0)
        nx1, ny1 = max(x1, cx1), max(y1, cy1)
        if (nx0, ny0, nx1, ny1) == (cx0, cy0, cx1, cy1):
            return
        values = np.zeros((ny1 - ny0, nx1 - nx0))
        count = np.zeros((ny1 - ny0, nx1 - nx0), dtype=np.int64)
        r, c = cy0 - ny0, cx0 - nx0
        h, w = self.values.shape
        values[r:r + h, c:c + w] = self.values
        count[r:r + h, c:c + w] = self.count
        self.values, self.count, self.origin = values, count, (nx0, ny0)


def footprint_bounds(motion_first_to_frame: AffineMotion, width: int,
                     height: int) -> tuple[int, int, int, int]:
    """Integer end-exclusive box (first-frame coordinates) holding the frame's footprint."""
    inv = invert(motion_first_to_frame)
    xs = np.array([0, width - 1, 0, width - 1], dtype=np.float64)
    ys = np.array([0, 0, height - 1, height - 1], dtype=np.float64)
    qx, qy = inv.map_points(xs, ys)
    return (int(math.floor(qx.min())), int(math.floor(qy.min())),
            int(math.ceil(qx.max())) + 1, int(math.ceil(qy.max())) + 1)


def warp_into(canvas: MosaicCanvas, frame: Raster, mask: RegionMask,
              motion_first_to_frame: AffineMotion,
              policy: CompositePolicy = CompositePolicy.LAST) -> MosaicCanvas:
    """Backward-warp ``frame`` into ``canvas`` and composite it in place.

    Every canvas pixel inside the frame's footprint is mapped forward into
    the frame and sampled bilinearly; samples touching invalid mask pixels
    contribute nothing.
    """
    check_same_shape(frame, mask)
    policy = CompositePolicy(policy)
    x0, y0, x1, y1 = footprint_bounds(motion_first_to_frame, frame.width, frame.height)
    canvas.grow_to(x0, y0, x1, y1)
    ox, oy = canvas.origin
    qy, qx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    u, v = evaluate(motion_first_to_frame, qx, qy)
    vals, ok = bilinear_masked(frame.samples, mask.valid, qx + u, qy + v)

    rows = slice(y0 - oy, y1 - oy)
    cols = slice(x0 - ox, x1 - ox)
    cur = canvas.values[rows, cols]
    cnt = canvas.count[rows, cols]
    if policy is CompositePolicy.LAST:
        cur[ok] = vals[ok]
    elif policy is CompositePolicy.FIRST:
        fresh = ok & (cnt == 0)
        cur[fresh] = vals[fresh]
    else:
        cur[ok] = (cur[ok] * cnt[ok] + vals[ok]) / (cnt[ok] + 1)
    cnt[ok] += 1
    canvas.motion = motion_first_to_frame
    return canvas


@dataclass
class FrameReport:
    index: int
    status: FrameStatus
    reference_index: Optional[int] = None
    init_mode: Optional[str] = None
    init_motion: Optional[AffineMotion] = None
    motion: Optional[AffineMotion] = None
    chained: Optional[AffineMotion] = None
    matches: list = field(default_factory=list)
    stage1_survivors: int = 0
    stage2_survivors: int = 0
    probes: int = 0
    shifts: int = 0
    fits: int = 0
    kourogi_iterations: int = 0
    init_fallback: bool = False
    timings_ms: dict = field(default_factory=dict)
    message: str = ""

    def to_dict(self) -> dict:
        def params(m):
            return None if m is None else list(m.params)

        return {
            "index": self.index,
            "status": self.status.value,
            "reference_index": self.reference_index,
            "init_mode": self.init_mode,
            "init_motion": params(self.init_motion),
            "motion": params(self.motion),
            "chained": params(self.chained),
            "stage1_survivors": self.stage1_survivors,
            "stage2_survivors": self.stage2_survivors,
            "probes": self.probes,
            "shifts": self.shifts,
            "fits": self.fits,
            "kourogi_iterations": self.kourogi_iterations,
            "init_fallback": self.init_fallback,
            "timings_ms": dict(self.timings_ms),
            "message": self.message,
            "matches": [m.to_dict() for m in self.matches],
        }


def _fill_from_result(report: FrameReport, result: RegistrationResult) -> None:
    d = result.diagnostics
    report.init_mode = result.init.mode.value if result.init else None
    report.init_motion = result.init_motion
    report.matches = list(result.matches)
    report.stage1_survivors = d.get("stage1_survivors", 0)
    report.stage2_survivors = d.get("stage2_survivors", 0)
    report.probes = d.get("probes", 0)
    report.shifts = d.get("shifts", 0)
    report.fits = d.get("fits", 0)
    report.kourogi_iterations = d.get("kourogi_iterations", 0)
    report.init_fallback = d.get("init_fallback", False)
    report.timings_ms.update(d.get("timings", {}))


def build_mosaic(frames: Sequence[tuple[Raster, RegionMask]],
                 config: RegistrationConfig = RegistrationConfig(),
                 composite: CompositePolicy = CompositePolicy.LAST,
                 threads: int = 1) -> tuple[MosaicCanvas, list[FrameReport]]:
    """Register each frame against the last successfully registered one and composite.

    A frame whose registration fails is reported and left out; the chain
    is carried forward unchanged, so the next frame is registered against
    the last good frame.
    """
    if not frames:
        raise ValueError("need at least one frame")
    composite = CompositePolicy(composite)
    first, first_mask = frames[0]
    for k, (raster, mask) in enumerate(frames):
        if raster.shape != first.shape:
            raise ValueError(f"frame {k} is {raster.shape}, expected {first.shape}")
        check_same_shape(raster, mask)

    canvas = MosaicCanvas()
    t0 = time.perf_counter()
    warp_into(canvas, first, first_mask, AffineMotion.zero(), composite)
    reports = [FrameReport(index=0, status=FrameStatus.OK, motion=AffineMotion.zero(),
                           chained=AffineMotion.zero(),
                           timings_ms={"warp_ms": (time.perf_counter() - t0) * 1e3})]

    ref_index = 0
    chain = AffineMotion.zero()
    prev_result: RegistrationResult | None = None
    for k in range(1, len(frames)):
        raster, mask = frames[k]
        ref, ref_mask = frames[ref_index]
        report = FrameReport(index=k, status=FrameStatus.FAILED, reference_index=ref_index)
        try:
            result = register(ref, raster, ref_mask, config, prev=prev_result,
                              object_mask=mask, threads=threads)
        except (RegistrationFailedError, InsufficientAreaError) as exc:
            if getattr(exc, "result", None) is not None:
                _fill_from_result(report, exc.result)
            report.message = str(exc)
            report.chained = chain
            logger.warning("frame %d: registration failed: %s", k, exc)
            reports.append(report)
            continue
        _fill_from_result(report, result)
        step_chain = compose(chain, result.motion)
        report.motion = result.motion
        report.chained = step_chain
        t0 = time.perf_counter()
        try:
            warp_into(canvas, raster, mask, step_chain, composite)
        except ValueError as exc:
            report.status = FrameStatus.SKIPPED
            report.message = f"not composited: {exc}"
            report.chained = chain
            logger.warning("frame %d: %s", k, report.message)
            reports.append(report)
            continue
        report.timings_ms["warp_ms"] = (time.perf_counter() - t0) * 1e3
        report.status = FrameStatus.OK
        reports.append(report)
        chain = step_chain
        ref_index = k
        prev_result = result
    return canvas, reports
