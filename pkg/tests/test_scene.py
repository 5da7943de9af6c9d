from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foveated_tof.priors import warp_prior_by_flow
from foveated_tof.scene import (
    SPEED_OF_LIGHT,
    DepthFrame,
    DepthRangeError,
    FlowField,
    ReflectanceFrame,
    SceneSequence,
    SceneSpecError,
    SensorConfig,
    bin_to_depth,
    depth_to_bin,
    generate_moving_sequence,
    generate_scene,
)

CFG = SensorConfig(z_max=10.0, n_bins=1000)


def test_period_derived_from_exact_speed_of_light():
    assert SPEED_OF_LIGHT == 299_792_458.0
    assert CFG.period == 2 * 10.0 / 299_792_458.0
    assert CFG.bin_width == CFG.period / 1000


@pytest.mark.parametrize(
    "kwargs",
    [dict(z_max=0), dict(n_bins=1), dict(cycles=0), dict(phi_sig=-1), dict(phi_bkg=-0.1), dict(pulse_fwhm=-1e-9), dict(seed=-1)],
)
def test_sensor_config_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        SensorConfig(**kwargs)


def test_sensor_json_round_trip_and_unknown_keys():
    cfg = SensorConfig(z_max=12.5, n_bins=512, cycles=77, phi_sig=0.3, phi_bkg=0.01, pulse_fwhm=1e-9, seed=9)
    assert SensorConfig.from_json_dict(cfg.to_json_dict()) == cfg
    with pytest.raises(ValueError):
        SensorConfig.from_json_dict({"n_bins": 10, "nbins": 10})


@pytest.mark.parametrize("d, expected", [(0.0, 0), (10.0, 999), (5.0, 500)])
def test_depth_to_bin_examples(d, expected):
    assert depth_to_bin(d, CFG) == expected


@pytest.mark.parametrize("i, expected", [(0, 0.005), (999, 9.995)])
def test_bin_to_depth_examples(i, expected):
    assert bin_to_depth(i, CFG) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("bad", [-0.01, 10.01, math.nan])
def test_depth_to_bin_out_of_range(bad):
    with pytest.raises(DepthRangeError):
        depth_to_bin(bad, CFG)


@pytest.mark.parametrize("bad", [-1, 1000])
def test_bin_to_depth_out_of_range(bad):
    with pytest.raises(DepthRangeError):
        bin_to_depth(bad, CFG)


@given(st.floats(0.0, 10.0))
def test_round_trip_within_half_bin(d):
    assert abs(bin_to_depth(depth_to_bin(d, CFG), CFG) - d) <= 10.0 / 2000 + 1e-12


@given(st.floats(0.0, 10.0), st.floats(0.0, 10.0))
def test_depth_to_bin_monotone(a, b):
    lo, hi = sorted((a, b))
    assert depth_to_bin(lo, CFG) <= depth_to_bin(hi, CFG)


def test_bin_to_depth_strictly_increasing():
    centers = bin_to_depth(np.arange(1000), CFG)
    assert np.all(np.diff(centers) > 0)


def test_depth_frame_invalid_is_nan_and_read_only():
    f = DepthFrame(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[True, False], [True, True]]))
    assert np.isnan(f.depth[0, 1]) and not f.valid[0, 1]
    with pytest.raises(ValueError):
        f.depth[0, 0] = 5.0
    assert DepthFrame(np.array([[np.nan, 1.0]])).valid.tolist() == [[False, True]]


def test_reflectance_and_flow_bounds():
    with pytest.raises(ValueError):
        ReflectanceFrame(np.array([[1.5]]))
    with pytest.raises(ValueError):
        FlowField(np.array([[np.inf]]), np.array([[0.0]]))
    with pytest.raises(ValueError):
        FlowField(np.full((2, 2), 3.0), np.zeros((2, 2)))


def test_plane_scene():
    d, a = generate_scene({"kind": "plane", "depth": 3.0})
    assert d.shape == (16, 16) and np.all(d.depth == 3.0)
    assert np.all(a.albedo == 0.5)


def test_staircase_four_equal_bands():
    d, _ = generate_scene({"kind": "staircase", "depths": [2, 4, 6, 8]})
    for k, depth in enumerate([2, 4, 6, 8]):
        assert np.all(d.depth[:, 4 * k:4 * (k + 1)] == depth)


def test_slanted_scene_spans_range():
    d, _ = generate_scene({"kind": "slanted", "near": 1.0, "far": 9.0, "width": 8, "height": 2})
    row = d.depth[0]
    assert np.all(np.diff(row) > 0) and row[0] > 1.0 and row[-1] < 9.0
    dy, _ = generate_scene({"kind": "slanted", "near": 1.0, "far": 9.0, "axis": "y", "width": 2, "height": 8})
    assert np.all(np.diff(dy.depth[:, 0]) > 0)


def test_boxes_scene():
    desc = {"kind": "boxes", "background": 7.0, "boxes": [{"x": 2, "y": 3, "w": 4, "h": 5, "depth": 2.0, "albedo": 0.9}]}
    d, a = generate_scene(desc)
    inside = np.zeros((16, 16), bool)
    inside[3:8, 2:6] = True
    assert np.all(d.depth[inside] == 2.0) and np.all(d.depth[~inside] == 7.0)
    assert np.allclose(a.albedo[inside], 0.9)


@pytest.mark.parametrize(
    "desc",
    [
        {"kind": "torus"},
        {"depth": 3.0},
        {"kind": "plane"},
        {"kind": "plane", "depth": 3.0, "width": 0},
        {"kind": "staircase", "depths": []},
        {"kind": "staircase", "depths": [1, 2], "albedos": [0.5]},
        {"kind": "plane", "depth": 11.0, "z_max": 10.0},
        "not a mapping",
    ],
)
def test_malformed_descriptors(desc):
    with pytest.raises(SceneSpecError):
        generate_scene(desc)


def test_scene_generation_deterministic():
    desc = {"kind": "staircase", "depths": [1.5, 2.5, 3.5], "width": 9, "height": 3}
    a, _ = generate_scene(desc)
    b, _ = generate_scene(desc)
    assert a.depth.tobytes() == b.depth.tobytes()


MOVING = {
    "kind": "boxes",
    "width": 24,
    "height": 12,
    "background": 6.0,
    "boxes": [{"x": 3, "y": 2, "w": 6, "h": 5, "depth": 2.0, "velocity": [2, 0]}],
}


def test_static_sequence_has_zero_flow():
    seq = generate_moving_sequence({"kind": "boxes", "background": 5.0, "boxes": [{"x": 1, "y": 1, "w": 3, "h": 3, "depth": 2.0}]}, 4)
    assert len(seq) == 4 and len(seq.flows) == 3
    assert all(np.all(f.u == 0) and np.all(f.v == 0) for f in seq.flows)


def test_moving_box_flow_equals_velocity():
    seq = generate_moving_sequence(MOVING, 2)
    box = seq.depths[0].depth == 2.0
    assert np.all(seq.flows[0].u[box] == 2) and np.all(seq.flows[0].v[box] == 0)
    assert np.all(seq.flows[0].u[~box] == 0)


def test_warped_frame_matches_next_except_disocclusion_band():
    seq = generate_moving_sequence(MOVING, 2)
    warped = warp_prior_by_flow(seq.depths[0], seq.flows[0])
    nxt = seq.depths[1].depth
    assert np.array_equal(warped.depth[warped.valid], nxt[warped.valid])
    holes = np.argwhere(~warped.valid)
    # uncovered band: the two columns the box left behind, over the box rows
    assert sorted(set(holes[:, 1].tolist())) == [3, 4]
    assert sorted(set(holes[:, 0].tolist())) == list(range(2, 7))


@given(st.integers(1, 6))
@settings(max_examples=10, deadline=None)
def test_depth_constancy_on_non_disoccluded_pixels(frames):
    seq = generate_moving_sequence(MOVING, frames + 1)
    for t in range(frames):
        u = seq.flows[t].u.astype(int)
        d0, d1 = seq.depths[t].depth, seq.depths[t + 1].depth
        ys, xs = np.nonzero(d0 == 2.0)
        tx = xs + u[ys, xs]
        ok = tx < d0.shape[1]
        assert np.all(d1[ys[ok], tx[ok]] == d0[ys[ok], xs[ok]])


def test_box_leaving_frame_is_still_valid():
    desc = dict(MOVING, boxes=[{"x": 20, "y": 2, "w": 3, "h": 3, "depth": 2.0, "velocity": [3, 0]}])
    seq = generate_moving_sequence(desc, 4)
    assert np.all(seq.depths[-1].depth == 6.0)


def test_sequence_validation():
    d = DepthFrame(np.ones((2, 2)))
    a = ReflectanceFrame(np.ones((2, 2)))
    with pytest.raises(ValueError):
        SceneSequence((d, d), (a, a), ())
    with pytest.raises(SceneSpecError):
        generate_moving_sequence({"kind": "plane", "depth": 1.0}, 2)
    with pytest.raises(SceneSpecError):
        generate_moving_sequence(dict(MOVING, boxes=[dict(MOVING["boxes"][0], velocity=[0.5, 0])]), 2)
