from __future__ import annotations

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from foveated_tof import container as fs
from foveated_tof.scene import DepthFrame, FlowField, ReflectanceFrame, SensorConfig


def test_header_layout(tmp_path):
    p = tmp_path / "d.fspd"
    fs.save_depth(p, DepthFrame(np.arange(6, dtype=float).reshape(2, 3)))
    raw = p.read_bytes()
    assert raw[:4] == b"FSPD" and raw[4] == 1 and raw[5] == 1 and raw[6:8] == b"\0\0"
    assert struct.unpack("<4I", raw[8:24]) == (3, 2, 1, 1)
    assert np.frombuffer(raw[24:], "<f4").tolist() == [0, 1, 2, 3, 4, 5]


shapes = st.tuples(st.integers(1, 6), st.integers(1, 6))


@given(hnp.arrays(np.float32, shapes, elements=st.floats(0, 10, width=32)))
@settings(max_examples=30)
def test_depth_round_trip(arr):
    frame = DepthFrame(arr)
    back = fs._to_object(*fs.decode(fs.encode(fs.KIND_DEPTH, frame.depth)))
    assert back.depth.tobytes() == frame.depth.tobytes()


def test_all_kinds_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    depth = DepthFrame(np.where(rng.random((4, 5)) < 0.2, np.nan, rng.uniform(0, 10, (4, 5))))
    albedo = ReflectanceFrame(rng.random((4, 5)))
    flow = FlowField(rng.uniform(-2, 2, (4, 5)), rng.uniform(-2, 2, (4, 5)))
    mask = rng.random((4, 5)) < 0.5
    cube = rng.integers(0, 2**32, (4, 5, 7), dtype=np.uint64).astype(np.uint32)
    for name, obj in [("d", depth), ("a", albedo), ("f", flow), ("m", mask), ("c", cube)]:
        fs.save_container(tmp_path / name, obj)
    d = fs.load_container(tmp_path / "d")
    assert np.array_equal(d.valid, depth.valid) and d.depth.tobytes() == depth.depth.tobytes()
    assert fs.load_container(tmp_path / "a").albedo.tobytes() == albedo.albedo.tobytes()
    f = fs.load_container(tmp_path / "f")
    assert f.u.tobytes() == flow.u.tobytes() and f.v.tobytes() == flow.v.tobytes()
    assert np.array_equal(fs.load_container(tmp_path / "m"), mask)
    c = fs.load_container(tmp_path / "c")
    assert c.dtype == np.uint32 and np.array_equal(c, cube)


def _depth_bytes():
    return fs.encode(fs.KIND_DEPTH, np.ones((16, 16), np.float32))


def test_wrong_magic():
    with pytest.raises(fs.FormatError):
        fs.decode(b"XSPD" + _depth_bytes()[4:])


@pytest.mark.parametrize("offset, value", [(4, 2), (5, 9), (6, 1)])
def test_bad_version_kind_reserved(offset, value):
    raw = bytearray(_depth_bytes())
    raw[offset] = value
    with pytest.raises(fs.FormatError):
        fs.decode(bytes(raw))


def test_truncated_payload():
    with pytest.raises(fs.TruncatedError):
        fs.decode(_depth_bytes()[:-4])
    with pytest.raises(fs.TruncatedError):
        fs.decode(_depth_bytes()[:10])
    with pytest.raises(fs.TruncatedError):
        fs.decode(_depth_bytes() + b"\0")


def test_dimension_overflow_and_zero():
    huge = fs.HEADER.pack(b"FSPD", 1, 4, 0, 65536, 65536, 1, 1000)
    with pytest.raises(fs.DimensionError):
        fs.decode(huge)
    zero = fs.HEADER.pack(b"FSPD", 1, 1, 0, 0, 4, 1, 1)
    with pytest.raises(fs.DimensionError):
        fs.decode(zero)


def test_errors_are_distinct():
    kinds = {fs.FormatError, fs.DimensionError, fs.TruncatedError}
    assert len(kinds) == 3 and all(issubclass(k, fs.ContainerError) for k in kinds)


def test_histogram_guards(tmp_path):
    with pytest.raises(fs.DimensionError):
        fs.save_histograms(tmp_path / "x", np.zeros((2, 2)))
    with pytest.raises(fs.DimensionError):
        fs.save_histograms(tmp_path / "x", np.full((1, 1, 1), -1))
    with pytest.raises(TypeError):
        fs.save_container(tmp_path / "x", "nope")


def test_sensor_sidecar(tmp_path):
    cfg = SensorConfig(cycles=5, phi_bkg=0.1, seed=3)
    fs.save_sensor_config(tmp_path / "s.json", cfg)
    assert fs.load_sensor_config(tmp_path / "s.json") == cfg
    text = (tmp_path / "s.json").read_text()
    for key in ("z_max_m", "n_bins", "cycles", "phi_sig", "phi_bkg", "pulse_fwhm_s", "seed"):
        assert f'"{key}"' in text
