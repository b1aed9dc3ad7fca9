import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logmosaic.affine import AffineMotion, compose
from logmosaic.image_core import RegionMask, erode_for_template, sample_bilinear
from logmosaic.matching import TemplateSpec, extract_patch, ncc
from logmosaic.synth import (Illumination, SynthSpec, Texture, apply_illumination, chain_motions,
                             corner_error, count_local_maxima, exhaustive_match, export_sequence,
                             generate_sequence, is_unimodal, load_truth, make_texture,
                             ncc_surface)


def test_identity_frames_identical():
    fr = generate_sequence(SynthSpec(width=40, height=30, frame_count=4))
    for f in fr[1:]:
        assert np.array_equal(f.raster.samples, fr[0].raster.samples)


def test_translation_definition():
    fr = generate_sequence(SynthSpec(width=48, height=32, seed=3, frame_count=3,
                                     motion_truth=AffineMotion.translation(5, 0)))
    f1, f2 = fr[1].raster, fr[2].raster
    for x, y in [(5, 0), (20, 10), (47, 31)]:
        assert f2.samples[y, x] == pytest.approx(sample_bilinear(f1, x - 5, y), abs=1e-9)


def test_subpixel_motion_consistent_with_chain():
    steps = (AffineMotion(0.01, 0, 1.5, 0, -0.01, 0.25), AffineMotion.translation(-0.5, 2))
    fr = generate_sequence(SynthSpec(width=64, height=48, seed=1, frame_count=3, motion_truth=steps))
    chained = chain_motions(steps)
    assert chained[2] == compose(compose(AffineMotion(), steps[0]), steps[1])
    assert fr[1].truth == steps[0] and fr[0].truth == AffineMotion()


def test_ramp_half_means():
    fr = generate_sequence(SynthSpec(width=100, height=60, seed=2,
                                     illumination=Illumination(ramp=0.2)))
    img = fr[1].raster.samples
    base = fr[0].raster.samples
    diff = img[:, 50:].mean() - img[:, :50].mean() - (base[:, 50:].mean() - base[:, :50].mean())
    assert diff == pytest.approx(0.2 * base.mean(), rel=0.02)


def test_gain_and_offset():
    s = np.arange(12.0).reshape(3, 4)
    assert np.allclose(apply_illumination(s, Illumination(gain=2, offset=-1)), 2 * s - 1)
    with pytest.raises(ValueError):
        Illumination(gain=0)


def test_deterministic_and_seed_sensitive():
    spec = SynthSpec(width=50, height=40, seed=11, frame_count=3,
                     motion_truth=AffineMotion(0.02, 0.01, 1, -0.01, 0, 2),
                     illumination=Illumination(gain=1.1, ramp=0.1))
    a = generate_sequence(spec)
    b = generate_sequence(spec)
    assert all(np.array_equal(x.raster.samples, y.raster.samples) for x, y in zip(a, b))
    c = generate_sequence(SynthSpec(width=50, height=40, seed=12))
    assert not np.array_equal(a[0].raster.samples, c[0].raster.samples)


@pytest.mark.parametrize("texture", list(Texture))
def test_textures_have_variance_at_template_scale(texture):
    t = make_texture(texture, 80, 80, np.random.default_rng(0))
    assert t.min() >= 0 and t.max() <= 255
    for y in range(7, 73, 11):
        for x in range(7, 73, 11):
            assert np.var(t[y - 7:y + 8, x - 7:x + 8]) > 1.0


def test_circular_mask_option():
    fr = generate_sequence(SynthSpec(width=64, height=64, circular_mask=True))
    assert not fr[0].mask.valid[0, 0] and fr[0].mask.valid[32, 32]


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(width=4)
    with pytest.raises(ValueError):
        SynthSpec(frame_count=3, motion_truth=(AffineMotion(),))


def test_corner_error_examples():
    m = AffineMotion(0.01, 0, 2, 0, 0, 1)
    assert corner_error(m, m, 100, 100) == 0
    assert corner_error(AffineMotion(0.01, 0, 3, 0, 0, 1), m, 100, 100) == pytest.approx(1.0)
    assert corner_error(AffineMotion(0.01, 0, 0, 0, 0, 0), AffineMotion(), 100, 100) == pytest.approx(0.99)


def direct_surface(ref, obj, lm, half, R, valid):
    a = extract_patch(ref.samples, lm[0], lm[1], half)
    out = np.full((2 * R + 1, 2 * R + 1), -np.inf)
    for dy in range(-R, R + 1):
        for dx in range(-R, R + 1):
            x, y = lm[0] + dx, lm[1] + dy
            if valid.contains(x, y):
                out[dy + R, dx + R] = ncc(a, extract_patch(obj.samples, x, y, half))
    return out


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.integers(-6, 6), st.integers(-6, 6),
       st.integers(2, 5), st.integers(3, 8), st.booleans())
def test_vectorised_surface_matches_direct(seed, tx, ty, half, R, near_border):
    fr = generate_sequence(SynthSpec(width=48, height=40, seed=seed,
                                     motion_truth=AffineMotion.translation(tx, ty)))
    ref, obj = fr[0].raster, fr[1].raster
    valid = erode_for_template(RegionMask.circle(48, 40), half)
    lm = (half + 2, 20) if near_border else (24, 20)
    if not valid.contains(*lm):
        lm = (24, 20)
    surface, origin = ncc_surface(ref, obj, lm, TemplateSpec(half), R, valid)
    assert origin == lm
    expected = direct_surface(ref, obj, lm, half, R, valid)
    assert np.array_equal(np.isfinite(surface), np.isfinite(expected))
    fin = np.isfinite(expected)
    assert np.allclose(surface[fin], expected[fin], atol=1e-9)


def test_exhaustive_examples():
    fr = generate_sequence(SynthSpec(width=64, height=64, seed=5,
                                     motion_truth=AffineMotion.translation(-4, 6)))
    ref, obj = fr[0].raster, fr[1].raster
    valid = erode_for_template(fr[0].mask, 5)
    t = TemplateSpec(5)
    same = exhaustive_match(ref, ref, (32, 30), t, 8, valid)
    assert (same.u, same.v) == (32, 30) and same.score == pytest.approx(1.0)
    moved = exhaustive_match(ref, obj, (32, 30), t, 8, valid)
    assert (moved.u, moved.v) == (28, 36)
    assert moved.probes == 17 * 17
    edge = exhaustive_match(ref, obj, (8, 30), t, 8, valid)
    window = valid.valid[22:39, 0:17]
    assert edge.probes == int(window.sum())


def test_tie_break_centre_first():
    from logmosaic.synth import match_from_surface

    s = np.zeros((5, 5))
    s[0, 0] = s[2, 2] = 1
    assert (match_from_surface(s, (10, 10)).u, match_from_surface(s, (10, 10)).v) == (10, 10)
    s[2, 2] = 0.5
    assert (match_from_surface(s, (10, 10)).u, match_from_surface(s, (10, 10)).v) == (8, 8)


def test_local_maxima_counting():
    s = -np.add.outer((np.arange(7) - 3.0) ** 2, (np.arange(7) - 3.0) ** 2)
    assert count_local_maxima(s) == 1 and is_unimodal(s)
    s[0, 0] = 10
    assert count_local_maxima(s) == 2
    s[:, :] = 1.0
    assert count_local_maxima(s) == 49
    s = np.full((3, 3), -np.inf)
    s[1, 1] = 0.2
    assert is_unimodal(s)


def test_export_and_load(tmp_path):
    steps = (AffineMotion.translation(2, 1), AffineMotion(0.01, 0, 0, 0, 0.01, 0))
    fr = generate_sequence(SynthSpec(width=32, height=24, frame_count=3, motion_truth=steps))
    path = export_sequence(fr, tmp_path)
    data = load_truth(path)
    assert data["frames"] == ["frame_0000.pgm", "frame_0001.pgm", "frame_0002.pgm"]
    assert data["steps"] == list(steps)
    assert data["chained"][2] == chain_motions(steps)[2]
    assert (tmp_path / "mask.pgm").exists()
    assert math.isclose(data["width"], 32)
