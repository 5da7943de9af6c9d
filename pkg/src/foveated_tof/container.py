"""FSPD binary container plus JSON sidecars.

Layout (little endian)::

    0-3   magic b"FSPD"
    4     version (1)
    5     payload kind
    6-7   reserved, zero
    8-23  width, height, channels, bins as uint32
    24-   row-major payload
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .scene import DepthFrame, FlowField, ReflectanceFrame, SensorConfig

MAGIC = b"FSPD"
VERSION = 1
HEADER = struct.Struct("<4sBBH4I")

KIND_DEPTH = 1
KIND_REFLECTANCE = 2
KIND_FLOW = 3
KIND_HISTOGRAM = 4
KIND_MASK = 5

_DTYPES = {
    KIND_DEPTH: np.dtype("<f4"),
    KIND_REFLECTANCE: np.dtype("<f4"),
    KIND_FLOW: np.dtype("<f4"),
    KIND_HISTOGRAM: np.dtype("<u4"),
    KIND_MASK: np.dtype("u1"),
}

# Guards against absurd headers before allocating.
MAX_ELEMENTS = 1 << 31


class ContainerError(Exception):
    """Base class for FSPD read/write failures."""


class FormatError(ContainerError):
    """Bad magic, version, kind or reserved bytes."""


class DimensionError(ContainerError):
    """Header dimensions are zero or overflow the allowed payload size."""


class TruncatedError(ContainerError):
    """Payload shorter (or longer) than the header promises."""


def encode(kind: int, payload: np.ndarray, channels: int = 1, bins: int = 1) -> bytes:
    """Encode a (height, width[, ...]) array into FSPD bytes."""
    if kind not in _DTYPES:
        raise FormatError(f"unknown payload kind {kind}")
    arr = np.ascontiguousarray(payload, dtype=_DTYPES[kind])
    h, w = arr.shape[:2]
    if arr.size != h * w * channels * bins:
        raise DimensionError("payload size does not match header dimensions")
    head = HEADER.pack(MAGIC, VERSION, kind, 0, w, h, channels, bins)
    return head + arr.tobytes()


def decode(data: bytes) -> tuple[int, np.ndarray]:
    """Decode FSPD bytes into (kind, array of shape (h, w, channels, bins))."""
    if len(data) < HEADER.size:
        raise TruncatedError("file shorter than FSPD header")
    magic, version, kind, reserved, w, h, channels, bins = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if kind not in _DTYPES:
        raise FormatError(f"unknown payload kind {kind}")
    if reserved != 0:
        raise FormatError("reserved header bytes must be zero")
    n = w * h * channels * bins
    if min(w, h, channels, bins) == 0 or n > MAX_ELEMENTS:
        raise DimensionError(f"invalid dimensions {w}x{h}x{channels}x{bins}")
    dtype = _DTYPES[kind]
    expected = n * dtype.itemsize
    body = memoryview(data)[HEADER.size:]
    if len(body) < expected:
        raise TruncatedError(f"payload has {len(body)} bytes, header promises {expected}")
    if len(body) > expected:
        raise TruncatedError("trailing bytes after payload")
    arr = np.frombuffer(body, dtype=dtype).reshape(h, w, channels, bins).copy()
    return kind, arr


def _write(path, blob: bytes) -> None:
    Path(path).write_bytes(blob)


def _read(path) -> tuple[int, np.ndarray]:
    return decode(Path(path).read_bytes())


def save_depth(path, frame: DepthFrame) -> None:
    _write(path, encode(KIND_DEPTH, frame.depth))


def save_reflectance(path, frame: ReflectanceFrame) -> None:
    _write(path, encode(KIND_REFLECTANCE, frame.albedo))


def save_flow(path, flow: FlowField) -> None:
    _write(path, encode(KIND_FLOW, np.stack([flow.u, flow.v], axis=-1), channels=2))


def save_mask(path, mask: np.ndarray) -> None:
    _write(path, encode(KIND_MASK, np.asarray(mask, dtype=np.uint8)))


def save_histograms(path, counts: np.ndarray) -> None:
    """Save a (height, width, bins) count cube."""
    counts = np.asarray(counts)
    if counts.ndim != 3:
        raise DimensionError("histogram cube must be (height, width, bins)")
    if counts.size and (counts.min() < 0 or counts.max() > np.iinfo(np.uint32).max):
        raise DimensionError("histogram counts do not fit uint32")
    _write(path, encode(KIND_HISTOGRAM, counts, bins=counts.shape[2]))


def load_container(path):
    """Load any FSPD file, returning the matching frame type.

    Depth -> DepthFrame, reflectance -> ReflectanceFrame, flow -> FlowField,
    histogram -> uint32 (h, w, bins) array, mask -> bool (h, w) array.
    """
    kind, arr = _read(path)
    return _to_object(kind, arr)


def _to_object(kind: int, arr: np.ndarray):
    if kind == KIND_DEPTH:
        return DepthFrame(arr[:, :, 0, 0])
    if kind == KIND_REFLECTANCE:
        return ReflectanceFrame(arr[:, :, 0, 0])
    if kind == KIND_FLOW:
        return FlowField(arr[:, :, 0, 0], arr[:, :, 1, 0])
    if kind == KIND_HISTOGRAM:
        return arr[:, :, 0, :]
    return arr[:, :, 0, 0].astype(bool)


def save_container(path, obj) -> None:
    """Dispatch on object type; arrays are treated as masks (bool) or cubes (3-D)."""
    if isinstance(obj, DepthFrame):
        save_depth(path, obj)
    elif isinstance(obj, ReflectanceFrame):
        save_reflectance(path, obj)
    elif isinstance(obj, FlowField):
        save_flow(path, obj)
    elif isinstance(obj, np.ndarray) and obj.ndim == 3:
        save_histograms(path, obj)
    elif isinstance(obj, np.ndarray) and obj.dtype == bool:
        save_mask(path, obj)
    else:
        raise TypeError(f"cannot store {type(obj).__name__} in an FSPD container")


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_sensor_config(path, cfg: SensorConfig) -> None:
    dump_json(path, cfg.to_json_dict())


def load_sensor_config(path) -> SensorConfig:
    return SensorConfig.from_json_dict(json.loads(Path(path).read_text()))
