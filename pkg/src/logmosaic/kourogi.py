"""Iterative pseudo-motion estimation (Kourogi's method).

Each iteration computes, at every usable pixel ``(x, y)`` of the previous
frame, the pseudo motion

    I_t  = I_curr(x + u_c, y + v_c) - I_prev(x, y)
    u_p  = -I_t / I_x + u_c
    v_p  = -I_t / I_y + v_c

keeps the pixels that pass the gray-level acceptance test, and refits the
global motion to them. ``I_x`` and ``I_y`` are central differences of the
previous frame. The two components are divided independently, exactly as
the method prescribes, rather than solving the usual brightness-constancy
constraint.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .affine import (AffineMotion, DegenerateGeometryError, InsufficientDataError,
                     evaluate, fit_affine_arrays)
from .image_core import (Raster, RegionMask, bilinear_masked, check_same_shape,
                         erode_for_template, gradient_field)

logger = logging.getLogger(__name__)

# |gradient| at or below this counts as "zero" (luminance per pixel)
GRADIENT_EPS = 1e-3


class InitializationFailedError(RuntimeError):
    """No pixel survived the acceptance test, or the fit was impossible."""


class MotionModel(str, Enum):
    TRANSLATION_ONLY = "translation_only"
    FULL_AFFINE = "full_affine"


@dataclass(frozen=True)
class KourogiConfig:
    T: float = 5.0
    max_iters: int = 10
    min_delta: float = 0.1
    model: MotionModel = MotionModel.TRANSLATION_ONLY

    def __post_init__(self):
        object.__setattr__(self, "model", MotionModel(self.model))
        if not self.T > 0:
            raise ValueError("T must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.min_delta < 0:
            raise ValueError("min_delta must be >= 0")


@dataclass
class PseudoMotionField:
    """Accepted pixels of one iteration: positions and their pseudo motion."""

    x: np.ndarray
    y: np.ndarray
    u_p: np.ndarray
    v_p: np.ndarray

    def __len__(self) -> int:
        return int(self.x.size)


@dataclass
class KourogiResult:
    motion: AffineMotion
    iterations: int
    converged: bool
    accepted_counts: list[int] = field(default_factory=list)
    trajectory: list[AffineMotion] = field(default_factory=list)


def _corners(width: int, height: int):
    return (np.array([0, width - 1, 0, width - 1], dtype=np.float64),
            np.array([0, 0, height - 1, height - 1], dtype=np.float64))


def motion_change(a: AffineMotion, b: AffineMotion, width: int, height: int) -> float:
    """Largest change in displacement over the four image corners."""
    cx, cy = _corners(width, height)
    ua, va = evaluate(a, cx, cy)
    ub, vb = evaluate(b, cx, cy)
    return float(np.max(np.hypot(ua - ub, va - vb)))


def pseudo_motion_components(prev: Raster, curr: Raster, x: int, y: int,
                             motion: AffineMotion) -> tuple[float, float, float]:
    """Raw ``(I_t, u_p, v_p)`` at one pixel, before any acceptance test.

    A zero gradient component yields ``nan`` for that pseudo-motion component.
    """
    from .image_core import gradient_central, sample_bilinear

    ix, iy = gradient_central(prev, x, y)
    uc, vc = evaluate(motion, x, y)
    it = sample_bilinear(curr, x + uc, y + vc) - prev.samples[y, x]
    up = -it / ix + uc if ix != 0 else math.nan
    vp = -it / iy + vc if iy != 0 else math.nan
    return it, up, vp


def acceptance_test(prev: Raster, curr: Raster, mask: RegionMask, x: int, y: int,
                    u_p: float, v_p: float, T: float) -> bool:
    """Gray-level acceptance of one pixel's pseudo motion.

    (a) both gradient components clear of zero, (b) the displaced position
    lies inside the mask, (c) the displaced luminance differs from the
    original by strictly less than ``T``.
    """
    h, w = prev.shape
    if not (1 <= x <= w - 2 and 1 <= y <= h - 2):
        return False
    gx, gy = gradient_field(prev.samples[y - 1:y + 2, x - 1:x + 2])
    if abs(gx[1, 1]) <= GRADIENT_EPS or abs(gy[1, 1]) <= GRADIENT_EPS:
        return False
    if not (math.isfinite(u_p) and math.isfinite(v_p)):
        return False
    val, ok = bilinear_masked(curr.samples, mask.valid, np.array([x + u_p]), np.array([y + v_p]))
    if not ok[0]:
        return False
    return bool(abs(val[0] - prev.samples[y, x]) < T)


def pseudo_motion_at(prev: Raster, curr: Raster, x: int, y: int, motion: AffineMotion,
                     mask: RegionMask | None = None,
                     T: float = 5.0) -> tuple[float, float] | None:
    """Pseudo motion at one pixel, or ``None`` when the acceptance test rejects it."""
    if not (1 <= x <= prev.width - 2 and 1 <= y <= prev.height - 2):
        return None
    if mask is None:
        mask = RegionMask.full(prev.width, prev.height)
    _, up, vp = pseudo_motion_components(prev, curr, x, y, motion)
    if not acceptance_test(prev, curr, mask, x, y, up, vp, T):
        return None
    return up, vp


class _Frames:
    """Per-pair data reused across iterations: candidate pixels and gradients."""

    def __init__(self, prev: Raster, curr: Raster, mask: RegionMask, curr_mask: RegionMask):
        interior = erode_for_template(mask, 1).valid
        gx, gy = gradient_field(prev.samples)
        usable = interior & (np.abs(gx) > GRADIENT_EPS) & (np.abs(gy) > GRADIENT_EPS)
        ys, xs = np.nonzero(usable)
        self.x = xs.astype(np.float64)
        self.y = ys.astype(np.float64)
        self.ix = gx[ys, xs]
        self.iy = gy[ys, xs]
        self.i_prev = prev.samples[ys, xs]
        self.curr = curr.samples
        self.curr_valid = curr_mask.valid
        self.diag = math.hypot(prev.width, prev.height)


def _pseudo_motion(frames: _Frames, motion: AffineMotion, T: float) -> PseudoMotionField:
    uc, vc = evaluate(motion, frames.x, frames.y)
    i_c, ok = bilinear_masked(frames.curr, frames.curr_valid, frames.x + uc, frames.y + vc)
    it = i_c - frames.i_prev
    du = -it / frames.ix
    dv = -it / frames.iy
    ok &= (np.abs(du) <= frames.diag) & (np.abs(dv) <= frames.diag)
    up = du + uc
    vp = dv + vc
    val, inside = bilinear_masked(frames.curr, frames.curr_valid,
                                  frames.x + up, frames.y + vp)
    ok &= inside & (np.abs(val - frames.i_prev) < T)
    return PseudoMotionField(frames.x[ok], frames.y[ok], up[ok], vp[ok])


def pseudo_motion_field(prev: Raster, curr: Raster, mask: RegionMask,
                        motion: AffineMotion, T: float = 5.0) -> PseudoMotionField:
    """Accepted pseudo-motion samples for one iteration."""
    check_same_shape(prev, mask)
    return _pseudo_motion(_Frames(prev, curr, mask, mask), motion, T)


def fit_model(field_: PseudoMotionField, model: MotionModel) -> AffineMotion:
    if model is MotionModel.TRANSLATION_ONLY:
        return AffineMotion.translation(float(np.mean(field_.u_p)), float(np.mean(field_.v_p)))
    return fit_affine_arrays(field_.x, field_.y, field_.u_p, field_.v_p)


def kourogi_iterate(prev: Raster, curr: Raster, mask: RegionMask,
                    config: KourogiConfig = KourogiConfig(),
                    initial: AffineMotion = AffineMotion(),
                    curr_mask: RegionMask | None = None) -> KourogiResult:
    """Run the pseudo-motion loop and return the final fit with its trace."""
    if prev.shape != curr.shape:
        raise ValueError("frames differ in size")
    check_same_shape(prev, mask)
    if mask.count() == 0:
        raise ValueError("mask has no valid pixels")
    frames = _Frames(prev, curr, mask, curr_mask if curr_mask is not None else mask)
    motion = initial
    result = KourogiResult(motion=initial, iterations=0, converged=False)
    for it in range(1, config.max_iters + 1):
        field_ = _pseudo_motion(frames, motion, config.T)
        result.accepted_counts.append(len(field_))
        if len(field_) == 0:
            raise InitializationFailedError(f"no pixel accepted in iteration {it}")
        try:
            new = fit_model(field_, config.model)
        except (InsufficientDataError, DegenerateGeometryError) as exc:
            raise InitializationFailedError(f"iteration {it}: {exc}") from exc
        result.trajectory.append(new)
        delta = motion_change(motion, new, prev.width, prev.height)
        motion = new
        result.iterations = it
        logger.debug("kourogi iter %d: %d accepted, delta %.4f", it, len(field_), delta)
        if delta < config.min_delta:
            result.converged = True
            break
    result.motion = motion
    return result


def run_kourogi(prev: Raster, curr: Raster, mask: RegionMask,
                config: KourogiConfig = KourogiConfig(),
                initial: AffineMotion = AffineMotion()) -> AffineMotion:
    return kourogi_iterate(prev, curr, mask, config, initial).motion
