import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arsal.compositor import composite, extract_viewport, pad_ar, project_to_viewport, superimpose, viewport_to_sphere
from arsal.core import ViewportImage, ViewportSpec


def _pixel(v):
    return ViewportImage(np.full((1, 1, 3), v))


def test_direct_substitution_examples():
    ar = ViewportImage(np.full((1, 1, 3), 0.8), np.ones((1, 1)))
    out = composite(ar, _pixel(0.4), 0.25).rgb
    np.testing.assert_allclose(out, 0.5, atol=1e-15)
    ar = ViewportImage(np.ones((1, 1, 3)), np.ones((1, 1)))
    np.testing.assert_allclose(composite(ar, _pixel(0.0), 0.75).rgb, 0.75, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 1.0), st.integers(0, 2**31 - 1))
def test_transparent_region_is_background(alpha, seed):
    rng = np.random.default_rng(seed)
    ar = ViewportImage(rng.random((3, 4, 3)), np.zeros((3, 4)))
    bg = ViewportImage(rng.random((3, 4, 3)))
    np.testing.assert_array_equal(composite(ar, bg, alpha).rgb, bg.rgb)


def test_opaque_full_mix_is_ar(rng):
    ar = ViewportImage(rng.random((3, 4, 3)), np.ones((3, 4)))
    bg = ViewportImage(rng.random((3, 4, 3)))
    np.testing.assert_array_equal(composite(ar, bg, 1.0).rgb, ar.rgb)


def test_small_alpha_converges_to_background(rng):
    ar = ViewportImage(rng.random((3, 4, 3)), np.ones((3, 4)))
    bg = ViewportImage(rng.random((3, 4, 3)))
    for a in (1e-3, 1e-6, 1e-9):
        assert np.abs(composite(ar, bg, a).rgb - bg.rgb).max() <= a


def test_composite_rejects_size_mismatch():
    with pytest.raises(ValueError):
        composite(ViewportImage(np.zeros((2, 2, 3))), ViewportImage(np.zeros((3, 2, 3))), 0.5)


def test_pad_margins():
    spec = ViewportSpec(width_px=4, height_px=4, fov_h_deg=90.0)
    padded = pad_ar(np.ones((2, 2, 3)), spec)
    expected = np.zeros((4, 4))
    expected[1:3, 1:3] = 1.0
    np.testing.assert_array_equal(padded.alpha, expected)
    padded = pad_ar(np.ones((3, 3, 3)), spec)
    expected = np.zeros((4, 4))
    expected[0:3, 0:3] = 1.0
    np.testing.assert_array_equal(padded.alpha, expected)


def test_pad_identity_and_rejects_oversize(rng):
    spec = ViewportSpec(width_px=5, height_px=3, fov_h_deg=90.0)
    img = ViewportImage(rng.random((3, 5, 3)))
    padded = pad_ar(img, spec)
    np.testing.assert_array_equal(padded.rgb, img.rgb)
    np.testing.assert_array_equal(padded.alpha, img.alpha)
    with pytest.raises(ValueError):
        pad_ar(np.ones((4, 5, 3)), spec)


def test_constant_equirect_gives_constant_viewport():
    eq = np.full((32, 64, 3), 0.3)
    view = extract_viewport(eq, ViewportSpec(width_px=20, height_px=16, fov_h_deg=110.0))
    np.testing.assert_allclose(view.rgb, 0.3, atol=1e-12)


def test_equirect_centre_maps_to_viewport_centre():
    eq = np.zeros((90, 180, 3))
    eq[44:46, 89:91] = 1.0
    view = extract_viewport(eq, ViewportSpec(width_px=41, height_px=41, fov_h_deg=20.0))
    g = view.gray()
    assert g.max() > 0.5
    yy, xx = np.mgrid[: g.shape[0], : g.shape[1]]
    # the bright block is symmetric about the equirect centre
    assert (yy * g).sum() / g.sum() == pytest.approx(20.0, abs=0.05)
    assert (xx * g).sum() / g.sum() == pytest.approx(20.0, abs=0.05)


def test_malformed_equirect_rejected():
    with pytest.raises(ValueError):
        extract_viewport(np.zeros((32, 32, 3)), ViewportSpec(width_px=8, height_px=8))


def test_gnomonic_right_edge():
    spec = ViewportSpec(width_px=100, height_px=100, fov_h_deg=90.0)
    x, y, visible = project_to_viewport(0.0, 45.0, spec)
    assert float(x) == pytest.approx(100.0, abs=1e-9)
    assert float(y) == pytest.approx(50.0, abs=1e-9)
    assert bool(visible)
    x, y, visible = project_to_viewport(0.0, 170.0, ViewportSpec(fov_h_deg=110.0))
    assert not bool(visible)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.5, 99.5), st.floats(0.5, 79.5))
def test_projection_roundtrip(x, y):
    spec = ViewportSpec(width_px=100, height_px=80, fov_h_deg=100.0, center_lat_deg=20.0, center_long_deg=-30.0)
    lat, lon = viewport_to_sphere(np.array(x), np.array(y), spec)
    x2, y2, vis = project_to_viewport(lat, lon, spec)
    assert bool(vis)
    assert math.isclose(float(x2), x, abs_tol=1e-7) and math.isclose(float(y2), y, abs_tol=1e-7)


def test_superimpose_matches_explicit_chain(rng):
    spec = ViewportSpec(width_px=12, height_px=10, fov_h_deg=100.0)
    ar = ViewportImage(rng.random((4, 6, 3)))
    eq = rng.random((16, 32, 3))
    chained = composite(pad_ar(ar, spec), extract_viewport(eq, spec), 0.5)
    np.testing.assert_array_equal(superimpose(ar, eq, 0.5, spec).rgb, chained.rgb)
