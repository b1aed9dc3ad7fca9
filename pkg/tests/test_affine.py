import json

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from logmosaic.affine import (AffineMotion, DegenerateGeometryError, DisplacementSample,
                              InsufficientDataError, SingularTransformError, compose, evaluate,
                              fit_affine_arrays, fit_affine_lsq, invert, residuals)

small = st.floats(-0.3, 0.3)
shift = st.floats(-50, 50)
motions = st.builds(AffineMotion, small, small, shift, small, small, shift)


def samples_from(motion, pts):
    return [DisplacementSample(x, y, *evaluate(motion, x, y)) for x, y in pts]


def assert_motion_close(a, b, tol=1e-9):
    assert np.allclose(a.params, b.params, atol=tol, rtol=0), (a.params, b.params)


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        AffineMotion(a3=float("inf"))


def test_fit_zero_and_translation():
    pts = [(0, 0), (10, 0), (0, 10), (7, 3)]
    assert fit_affine_lsq(samples_from(AffineMotion(), pts)).params == pytest.approx((0,) * 6, abs=1e-12)
    got = fit_affine_lsq([DisplacementSample(x, y, 5, -2) for x, y in pts[:3]])
    assert_motion_close(got, AffineMotion.translation(5, -2))


def test_fit_recovers_generating_motion(rng):
    truth = AffineMotion(0.02, 0, 3, 0, 0.02, -1)
    pts = rng.uniform(0, 200, (20, 2))
    assert_motion_close(fit_affine_lsq(samples_from(truth, pts)), truth)


def test_fit_errors():
    with pytest.raises(InsufficientDataError):
        fit_affine_arrays([0, 1], [0, 1], [0, 0], [0, 0])
    with pytest.raises(DegenerateGeometryError):
        fit_affine_arrays([0, 1, 2, 3], [0, 2, 4, 6], [1, 1, 1, 1], [0, 0, 0, 0])


@settings(max_examples=100, deadline=None)
@given(motions, st.integers(3, 50), st.integers(0, 2**31))
def test_fit_exact_on_generated_data(truth, n, seed):
    pts = np.random.default_rng(seed).uniform(0, 300, (n, 2))
    x, y = pts.T
    area = np.abs(np.linalg.det(np.stack([x - x.mean(), y - y.mean()]) @ np.stack([x - x.mean(), y - y.mean()]).T))
    assume(area > 1e3)
    got = fit_affine_arrays(x, y, *evaluate(truth, x, y))
    assert_motion_close(got, truth, 1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_fit_is_least_squares_minimum(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 100, (12, 2))
    us, vs = rng.normal(0, 3, 12), rng.normal(0, 3, 12)
    samples = [DisplacementSample(x, y, u, v) for (x, y), u, v in zip(pts, us, vs)]
    best = fit_affine_lsq(samples)
    base = np.sum(residuals(best, samples) ** 2)
    for _ in range(20):
        other = AffineMotion.from_params(np.array(best.params) + rng.normal(0, 1e-3, 6))
        assert np.sum(residuals(other, samples) ** 2) >= base - 1e-9


def test_evaluate_examples():
    assert evaluate(AffineMotion(), 3, 4) == (0, 0)
    assert evaluate(AffineMotion(0, 0, 5, 0, 0, -2), 10, 10) == (5, -2)
    assert evaluate(AffineMotion(0.1, 0, 0, 0, 0, 0), 20, 7) == pytest.approx((2, 0))


def test_compose_examples():
    m = AffineMotion(0.01, -0.02, 3, 0.03, 0.0, -1)
    assert_motion_close(compose(AffineMotion(), m), m)
    assert_motion_close(compose(AffineMotion.translation(3, 0), AffineMotion.translation(0, 4)),
                        AffineMotion.translation(3, 4))
    assert_motion_close(compose(m, invert(m)), AffineMotion())


def test_compose_order_is_second_after_first():
    first = AffineMotion(0.1, 0, 0, 0, 0.1, 0)
    second = AffineMotion.translation(5, 0)
    px, py = compose(first, second).map_points(10.0, 0.0)
    assert (px, py) == pytest.approx((16.0, 0.0))


def test_invert_examples():
    assert_motion_close(invert(AffineMotion()), AffineMotion())
    assert_motion_close(invert(AffineMotion.translation(5, -2)), AffineMotion.translation(-5, 2))
    inv = invert(AffineMotion(0.1, 0, 0, 0, 0.1, 0))
    assert inv.a1 == pytest.approx(-0.1 / 1.1) and inv.a5 == pytest.approx(-0.1 / 1.1)


def test_invert_singular():
    with pytest.raises(SingularTransformError):
        invert(AffineMotion(-1, 0, 0, 0, 0, 0))


@settings(max_examples=100, deadline=None)
@given(motions, motions, motions)
def test_group_laws(a, b, c):
    assume(abs(a.det()) > 0.2 and abs(b.det()) > 0.2)
    assert_motion_close(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-9)
    assert_motion_close(compose(a, invert(a)), AffineMotion(), 1e-9)
    assert_motion_close(compose(invert(a), a), AffineMotion(), 1e-9)
    assert_motion_close(invert(compose(a, b)), compose(invert(b), invert(a)), 1e-9)


def test_json_round_trip():
    m = AffineMotion(0.5, -0.25, 3, 1e-3, 0, -7.125)
    assert json.loads(m.to_json()) == list(m.params)
    assert AffineMotion.from_json(m.to_json()) == m


def test_matrix_round_trip():
    m = AffineMotion(0.5, -0.25, 3, 1e-3, 0, -7.125)
    assert AffineMotion.from_matrix(m.matrix()) == m
    assert m.det() == pytest.approx(np.linalg.det(m.matrix()))
