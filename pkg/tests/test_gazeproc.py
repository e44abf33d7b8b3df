import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arsal.core import FixationMap, ViewportSpec
from arsal.fixtures import planted_trace
from arsal.gazeproc import (
    Fixation,
    FixationParams,
    GazePointLL,
    GazeSample,
    angular_velocity,
    density_from_fixations,
    detect_fixations,
    euler_to_latlong,
    fixation_map_from_fixations,
    gaussian_sigma_px,
    latlong_to_viewport_px,
    process_trace,
    read_fixations,
    write_fixations,
)
from helpers import spread_targets

DT = 1000.0 / 90.0


def _points(samples):
    return [GazePointLL(t, lat, lon) for t, lat, lon in samples]


def test_euler_examples():
    assert euler_to_latlong(GazeSample(0, 0, 0, 33)) == GazePointLL(0, 0.0, 0.0)
    p = euler_to_latlong(GazeSample(0, 30, 90))
    assert (p.lat_deg, p.long_deg) == (30.0, 90.0)
    assert euler_to_latlong(GazeSample(0, 0, 270)).long_deg == -90.0
    with pytest.raises(ValueError):
        euler_to_latlong(GazeSample(0, float("nan"), 0))


def test_velocity_examples():
    v = angular_velocity(_points([(0, 0, 0), (DT, 0, 0)]))
    assert v[0] == 0.0
    v = angular_velocity(_points([(0, 0, 0), (DT, 0, 1)]))
    assert v[0] == pytest.approx(90.0, rel=1e-9)
    v = angular_velocity(_points([(0, 0, 0), (1000.0, 90, 0)]))
    assert v[0] == pytest.approx(90.0, rel=1e-9)
    with pytest.raises(ValueError):
        angular_velocity(_points([(0, 0, 0), (0, 0, 1)]))


def test_single_dwell():
    trace = _points([(i * DT, 0.0, 0.0) for i in range(45)])
    (f,) = detect_fixations(trace)
    assert f.duration_ms == pytest.approx(44 * DT)  # 488.9 ms, first to last sample
    assert abs(f.lat_deg) < 1e-9 and abs(f.long_deg) < 1e-9


def test_alternating_jumps_give_nothing():
    trace = _points([(i * DT, 0.0, 60.0 if i % 2 else -60.0) for i in range(60)])
    assert detect_fixations(trace) == []


def test_two_dwells_split_by_saccade():
    samples = [(i * DT, 0.0, 0.0) for i in range(28)]
    samples.append((28 * DT, 0.0, 10.0))
    samples += [((29 + i) * DT, 0.0, 20.0) for i in range(28)]
    fixes = detect_fixations(_points(samples))
    assert len(fixes) == 2
    assert fixes[0].long_deg == pytest.approx(0.0, abs=1e-9)
    assert fixes[1].long_deg == pytest.approx(20.0, abs=1e-9)


def test_short_trace_warns():
    with pytest.warns(RuntimeWarning):
        assert detect_fixations(_points([(i * DT, 0, 0) for i in range(4)])) == []


def test_params_validation():
    with pytest.raises(ValueError):
        FixationParams(window_samples=6)
    with pytest.raises(ValueError):
        FixationParams(mad_mode="median")


def test_alternative_statistics_find_a_dwell():
    trace = _points([(i * DT, 5.0, 5.0) for i in range(45)])
    for mode in ("velocity-dispersion", "position"):
        assert len(detect_fixations(trace, FixationParams(mad_mode=mode))) == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-5000.0, 5000.0), st.floats(-40.0, 40.0))
def test_time_shift_and_rotation(seed, shift, rot):
    rng = np.random.default_rng(seed)
    samples = planted_trace(spread_targets(rng, 3, lon_span=40.0), rng)
    base = detect_fixations(_points(samples))
    shifted = detect_fixations(_points([(t + shift, lat, lon) for t, lat, lon in samples]))
    assert len(base) == len(shifted)
    for a, b in zip(base, shifted):
        assert b.onset_ms == pytest.approx(a.onset_ms + shift, abs=1e-6)
        assert b.duration_ms == pytest.approx(a.duration_ms, abs=1e-6)
        assert (b.lat_deg, b.long_deg) == pytest.approx((a.lat_deg, a.long_deg), abs=1e-9)
    rotated = detect_fixations(_points([(t, lat, lon + rot) for t, lat, lon in samples]))
    assert len(rotated) == len(base)
    for a, b in zip(base, rotated):
        assert b.long_deg == pytest.approx(a.long_deg + rot, abs=1e-6)
        assert b.lat_deg == pytest.approx(a.lat_deg, abs=1e-6)
        assert b.duration_ms == a.duration_ms


def test_retained_fixations_respect_floor(rng):
    for _ in range(10):
        samples = planted_trace(spread_targets(rng, 4), rng, hold_ms=float(rng.uniform(60, 300)))
        assert all(f.duration_ms >= 100.0 for f in detect_fixations(_points(samples)))


def test_viewport_mapping():
    spec = ViewportSpec(width_px=100, height_px=80, fov_h_deg=110.0)
    assert latlong_to_viewport_px((0.0, 0.0), spec) == pytest.approx((50.0, 40.0))
    x, _ = latlong_to_viewport_px((0.0, 55.0), spec)
    assert x == pytest.approx(100.0, abs=1e-9)
    assert latlong_to_viewport_px((0.0, 170.0), spec) is None
    fm, cov = fixation_map_from_fixations([Fixation(0, 0, 0, 200), Fixation(0, 170, 0, 200)], spec)
    assert fm.count == 1 and cov.outside == 1 and cov.fraction_inside == 0.5


def test_sigma_default():
    assert gaussian_sigma_px(ViewportSpec()) == pytest.approx(3.34 * 1440 / 110.0)


def test_density_single_and_empty():
    spec = ViewportSpec(width_px=60, height_px=50, fov_h_deg=110.0)
    d = density_from_fixations(FixationMap.from_points([(30, 25)], spec.shape), spec)
    assert abs(d.grid.sum() - 1.0) < 1e-9
    assert np.unravel_index(np.argmax(d.grid), d.shape) == (25, 30)
    empty = density_from_fixations(FixationMap(np.zeros(spec.shape, int)), spec)
    assert "empty" in empty.flags and not empty.grid.any()


def test_density_bimodal_matches_dense_sum():
    spec = ViewportSpec(width_px=120, height_px=40, fov_h_deg=110.0)
    pts = [(20, 20), (100, 20)]
    d = density_from_fixations(FixationMap.from_points(pts, spec.shape), spec)
    sigma = 3.34 * spec.width_px / spec.fov_h_deg
    oracle = np.zeros(spec.shape)
    for y in range(spec.height_px):
        for x in range(spec.width_px):
            for px, py in pts:
                r2 = (x - px) ** 2 + (y - py) ** 2
                if r2 <= (4 * sigma) ** 2:
                    oracle[y, x] += math.exp(-r2 / (2 * sigma * sigma))
    oracle /= oracle.sum()
    np.testing.assert_allclose(d.grid, oracle, atol=1e-12)
    assert d.grid[:, :60].sum() == pytest.approx(0.5, abs=1e-9)


def test_fixation_csv_roundtrip(tmp_path):
    rows = [("s1", "a", Fixation(1.25, -3.5, 10.0, 120.0)), ("s2", "a", Fixation(0.1, 0.2, 0.0, 300.0))]
    write_fixations(tmp_path / "f.csv", rows)
    back = read_fixations(tmp_path / "f.csv")
    assert back["a"]["s1"] == [rows[0][2]] and back["a"]["s2"] == [rows[1][2]]


def test_process_trace_from_euler():
    samples = [GazeSample(i * DT, 10.0, 370.0) for i in range(40)]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        (f,) = process_trace(samples)
    assert f.long_deg == pytest.approx(10.0)
