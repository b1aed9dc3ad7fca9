"""Six-parameter affine displacement fields.

A motion ``a = (a1, ..., a6)`` is a displacement field

    u(x, y) = a1*x + a2*y + a3
    v(x, y) = a4*x + a5*y + a6

and induces the position map ``P(x, y) = (x + u, y + v)``. Everything in the
package treats ``(u, v)`` as a displacement from reference (earlier frame)
coordinates to object (later frame) coordinates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

SINGULAR_DET = 1e-8
MAX_NORMAL_COND = 1e12


class InsufficientDataError(ValueError):
    pass


class DegenerateGeometryError(ValueError):
    pass


class SingularTransformError(ValueError):
    pass


@dataclass(frozen=True)
class AffineMotion:
    a1: float = 0.0
    a2: float = 0.0
    a3: float = 0.0
    a4: float = 0.0
    a5: float = 0.0
    a6: float = 0.0

    def __post_init__(self):
        for name in ("a1", "a2", "a3", "a4", "a5", "a6"):
            val = float(getattr(self, name))
            if not math.isfinite(val):
                raise ValueError(f"{name} is not finite")
            object.__setattr__(self, name, val)

    @classmethod
    def zero(cls) -> "AffineMotion":
        return cls()

    @classmethod
    def translation(cls, tx: float, ty: float) -> "AffineMotion":
        return cls(a3=tx, a6=ty)

    @classmethod
    def from_params(cls, params: Sequence[float]) -> "AffineMotion":
        if len(params) != 6:
            raise ValueError("expected 6 parameters")
        return cls(*(float(p) for p in params))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "AffineMotion":
        """Build from a 2x3 or 3x3 position-map matrix."""
        m = np.asarray(m, dtype=np.float64)
        return cls(m[0, 0] - 1.0, m[0, 1], m[0, 2], m[1, 0], m[1, 1] - 1.0, m[1, 2])

    @property
    def params(self) -> tuple[float, ...]:
        return (self.a1, self.a2, self.a3, self.a4, self.a5, self.a6)

    def matrix(self) -> np.ndarray:
        """Homogeneous 3x3 matrix of the position map."""
        return np.array([[1.0 + self.a1, self.a2, self.a3],
                         [self.a4, 1.0 + self.a5, self.a6],
                         [0.0, 0.0, 1.0]])

    def det(self) -> float:
        return (1.0 + self.a1) * (1.0 + self.a5) - self.a2 * self.a4

    def is_translation(self) -> bool:
        return self.a1 == 0.0 and self.a2 == 0.0 and self.a4 == 0.0 and self.a5 == 0.0

    def map_points(self, xs, ys) -> tuple[np.ndarray, np.ndarray]:
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        u, v = evaluate(self, xs, ys)
        return xs + u, ys + v

    def to_json(self) -> str:
        return json.dumps(list(self.params))

    @classmethod
    def from_json(cls, text: str) -> "AffineMotion":
        return cls.from_params(json.loads(text))


@dataclass(frozen=True)
class DisplacementSample:
    x: float
    y: float
    u: float
    v: float


def evaluate(motion: AffineMotion, x, y):
    """Displacement ``(u_c, v_c)`` at ``(x, y)``; works on scalars or arrays."""
    u = motion.a1 * x + motion.a2 * y + motion.a3
    v = motion.a4 * x + motion.a5 * y + motion.a6
    return u, v


def compose(first: AffineMotion, second: AffineMotion) -> AffineMotion:
    """Motion whose position map is ``second`` applied after ``first``."""
    return AffineMotion.from_matrix(second.matrix() @ first.matrix())


def invert(motion: AffineMotion) -> AffineMotion:
    det = motion.det()
    if abs(det) <= SINGULAR_DET:
        raise SingularTransformError(f"position map is singular (det={det:.3g})")
    m = motion.matrix()
    lin_inv = np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det
    t_inv = -lin_inv @ m[:2, 2]
    out = np.eye(3)
    out[:2, :2] = lin_inv
    out[:2, 2] = t_inv
    return AffineMotion.from_matrix(out)


def fit_affine_arrays(xs, ys, us, vs) -> AffineMotion:
    """Least-squares affine fit from parallel coordinate/displacement arrays.

    The u- and v-equations share one design matrix ``[x, y, 1]``, so both
    are solved against the same 3x3 normal matrix.
    """
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    us = np.asarray(us, dtype=np.float64).ravel()
    vs = np.asarray(vs, dtype=np.float64).ravel()
    n = xs.size
    if n < 3:
        raise InsufficientDataError(f"need at least 3 samples, got {n}")
    design = np.stack([xs, ys, np.ones(n)], axis=1)
    gram = design.T @ design
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > MAX_NORMAL_COND:
        raise DegenerateGeometryError(f"sample positions are (nearly) collinear, cond={cond:.3g}")
    rhs = design.T @ np.stack([us, vs], axis=1)
    sol = np.linalg.solve(gram, rhs)
    return AffineMotion(sol[0, 0], sol[1, 0], sol[2, 0], sol[0, 1], sol[1, 1], sol[2, 1])


def fit_affine_lsq(samples: Iterable[DisplacementSample]) -> AffineMotion:
    samples = list(samples)
    return fit_affine_arrays([s.x for s in samples], [s.y for s in samples],
                             [s.u for s in samples], [s.v for s in samples])


def residuals(motion: AffineMotion, samples: Iterable[DisplacementSample]) -> np.ndarray:
    """Euclidean distance between each sample's displacement and the model's."""
    samples = list(samples)
    xs = np.array([s.x for s in samples], dtype=np.float64)
    ys = np.array([s.y for s in samples], dtype=np.float64)
    u, v = evaluate(motion, xs, ys)
    du = np.array([s.u for s in samples]) - u
    dv = np.array([s.v for s in samples]) - v
    return np.hypot(du, dv)
