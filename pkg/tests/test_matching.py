import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from logmosaic.affine import AffineMotion
from logmosaic.image_core import Raster, RegionMask, ValidityMap, erode_for_template
from logmosaic.matching import (FlatTemplateError, Neighborhood, NoValidStartError,
                                SearchConfig, SearchDivergedError, TemplateSpec, log_search,
                                ncc, probe_offsets)
from logmosaic.synth import SynthSpec, exhaustive_match, generate_sequence

patches = arrays(np.float64, (5, 5), elements=st.floats(0, 255))


def test_ncc_examples():
    a = np.arange(9.0).reshape(3, 3) ** 1.5
    assert ncc(a, a) == pytest.approx(1.0)
    assert ncc(a, 2 * a + 10) == pytest.approx(1.0)
    assert ncc(np.array([[1.0, 2], [3, 4]]), np.array([[4.0, 3], [2, 1]])) == pytest.approx(-1.0)


def test_ncc_flat_is_minus_inf():
    a = np.arange(4.0).reshape(2, 2)
    assert ncc(a, np.full((2, 2), 3.0)) == -math.inf
    assert ncc(np.full((2, 2), 3.0), a) == -math.inf


def test_ncc_shape_checks():
    with pytest.raises(ValueError):
        ncc(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        ncc(np.zeros(1), np.zeros(1))


@given(patches, st.floats(0.01, 100), st.floats(-500, 500))
def test_ncc_gain_offset_invariance(a, g, b):
    assume(np.var(a) > 1e-3)
    assert abs(ncc(a, g * a + b) - 1) < 1e-6
    assert abs(ncc(a, -g * a + b) + 1) < 1e-6


@given(patches, patches)
def test_ncc_symmetric_and_bounded(a, b):
    r = ncc(a, b)
    assert r == ncc(b, a)
    assert r == -math.inf or -1 <= r <= 1


def test_probe_order():
    assert probe_offsets(Neighborhood.CROSS5, 4) == [(0, 0), (4, 0), (0, 4), (-4, 0), (0, -4)]
    assert len(probe_offsets(Neighborhood.SQUARE9, 2)) == 9


def test_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(w_init=12)
    with pytest.raises(ValueError):
        SearchConfig(w_init=16, max_probes=24)
    SearchConfig(w_init=16, max_probes=25)
    with pytest.raises(ValueError):
        SearchConfig(w_init=16, neighborhood="square9", max_probes=40)
    with pytest.raises(ValueError):
        TemplateSpec(0)


def pair(tx, ty, seed=3, size=96, smoothing=5):
    fr = generate_sequence(SynthSpec(width=size, height=size, seed=seed,
                                     motion_truth=AffineMotion.translation(tx, ty),
                                     smoothing=smoothing))
    return fr[0].raster, fr[1].raster, fr[0].mask


def test_identity_search(textured):
    t = TemplateSpec(7)
    valid = erode_for_template(RegionMask.full(textured.width, textured.height), 7)
    res = log_search(textured, textured, (40, 30), (0, 0), t, SearchConfig(), valid)
    assert (res.u, res.v, res.shifts) == (40, 30, 0)
    assert res.score == pytest.approx(1.0)
    # the centre is memoized, so each of the 5 rings costs 4 new probes
    assert res.probes == 1 + 4 * 5


@pytest.mark.parametrize("neighborhood", ["cross5", "square9"])
def test_translation_by_w_init(neighborhood):
    ref, obj, mask = pair(16, 0, smoothing=9)
    t = TemplateSpec(7)
    cfg = SearchConfig(w_init=16, neighborhood=neighborhood)
    valid = erode_for_template(mask, 7)
    res = log_search(ref, obj, (40, 48), (0, 0), t, cfg, valid)
    assert (res.u, res.v) == (56, 48)
    assert res.score == pytest.approx(1.0)
    oracle = exhaustive_match(ref, obj, (40, 48), t, 16, valid)
    assert (oracle.u, oracle.v) == (56, 48)
    assert res.probes <= cfg.probe_bound(res.shifts)


def test_start_displacement_is_rounded(textured):
    valid = erode_for_template(RegionMask.full(textured.width, textured.height), 5)
    res = log_search(textured, textured, (40, 30), (0.5, -0.4), TemplateSpec(5),
                     SearchConfig(w_init=2), valid)
    assert (res.u, res.v) == (40, 30)


def test_never_probes_invalid_positions(textured, monkeypatch):
    import logmosaic.matching as matching

    t = TemplateSpec(5)
    valid = erode_for_template(RegionMask.full(textured.width, textured.height), 5).valid.copy()
    valid[:, 45:] = False
    vm = ValidityMap(valid, 5)
    reads = []
    real = matching.extract_patch

    def spy(samples, x, y, half):
        reads.append((samples is textured.samples, x, y))
        return real(samples, x, y, half)

    monkeypatch.setattr(matching, "extract_patch", spy)
    res = log_search(textured, textured, (40, 30), (0, 0), t, SearchConfig(), vm)
    probed = [(x, y) for _, x, y in reads[1:]]
    assert len(probed) == res.probes
    assert all(vm.contains(x, y) for x, y in probed)


def test_no_valid_start(textured):
    t = TemplateSpec(5)
    empty = ValidityMap(np.zeros(textured.shape, bool), 5)
    with pytest.raises(NoValidStartError):
        log_search(textured, textured, (40, 30), (0, 0), t, SearchConfig(), empty)
    full = erode_for_template(RegionMask.full(textured.width, textured.height), 5)
    with pytest.raises(NoValidStartError):
        log_search(textured, textured, (2, 30), (0, 0), t, SearchConfig(), full)


def test_flat_reference_template():
    img = np.full((40, 40), 80.0)
    img[:, 30:] = np.arange(10.0) * 5
    r = Raster(img)
    valid = erode_for_template(RegionMask.full(40, 40), 3)
    with pytest.raises(FlatTemplateError):
        log_search(r, r, (10, 10), (0, 0), TemplateSpec(3), SearchConfig(w_init=4), valid)


def test_mismatched_validity_half_extent(textured):
    valid = erode_for_template(RegionMask.full(textured.width, textured.height), 3)
    with pytest.raises(ValueError):
        log_search(textured, textured, (40, 30), (0, 0), TemplateSpec(5), SearchConfig(), valid)


def test_diverged_when_probe_budget_tiny(rng):
    ref, obj, mask = pair(9, -5, smoothing=9)
    cfg = SearchConfig(w_init=16, max_probes=25)
    with pytest.raises(SearchDivergedError):
        log_search(ref, obj, (48, 48), (0, 0), TemplateSpec(7), cfg, erode_for_template(mask, 7))


def test_max_radius_confines(textured):
    ref, obj, mask = pair(9, -5, smoothing=9)
    cfg = SearchConfig(w_init=16, max_radius=3)
    res = log_search(ref, obj, (48, 48), (0, 0), TemplateSpec(7), cfg, erode_for_template(mask, 7))
    assert abs(res.u - 48) <= 3 and abs(res.v - 48) <= 3


@settings(max_examples=40, deadline=None)
@given(st.integers(-12, 12), st.integers(-12, 12), st.integers(0, 50),
       st.sampled_from(["cross5", "square9"]))
def test_probe_bound_always_holds(tx, ty, seed, neighborhood):
    ref, obj, mask = pair(tx, ty, seed=seed)
    cfg = SearchConfig(neighborhood=neighborhood)
    valid = erode_for_template(mask, 7)
    res = log_search(ref, obj, (48, 48), (0, 0), TemplateSpec(7), cfg, valid)
    assert res.probes <= cfg.probe_bound(res.shifts)
    assert res.probes <= cfg.max_probes
    assert -1 <= res.score <= 1
    assert valid.contains(res.u, res.v)
