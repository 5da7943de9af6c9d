"""Core domain types, depth/bin conversion and synthetic scene generators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact SI


class DepthRangeError(ValueError):
    """Depth or bin index outside the sensor's working volume."""


class SceneSpecError(ValueError):
    """Malformed scene descriptor."""


@dataclass(frozen=True)
class SensorConfig:
    z_max: float = 10.0  # working volume, meters
    n_bins: int = 1000
    cycles: int = 1000
    phi_sig: float = 1.0  # mean signal photons per cycle at unit albedo
    phi_bkg: float = 0.0  # mean background photons per cycle per full-width bin
    pulse_fwhm: float = 0.0  # seconds
    seed: int = 0

    def __post_init__(self):
        if not self.z_max > 0:
            raise ValueError(f"z_max must be > 0, got {self.z_max}")
        if self.n_bins < 2:
            raise ValueError(f"n_bins must be >= 2, got {self.n_bins}")
        if self.cycles < 1:
            raise ValueError(f"cycles must be >= 1, got {self.cycles}")
        if self.phi_sig < 0 or self.phi_bkg < 0 or self.pulse_fwhm < 0:
            raise ValueError("phi_sig, phi_bkg and pulse_fwhm must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    @property
    def period(self) -> float:
        """Temporal volume T = 2 z_max / c, in seconds."""
        return 2.0 * self.z_max / SPEED_OF_LIGHT

    @property
    def bin_width(self) -> float:
        """Full-resolution bin width T/N, in seconds."""
        return self.period / self.n_bins

    def replace(self, **changes) -> "SensorConfig":
        from dataclasses import replace

        return replace(self, **changes)

    def to_json_dict(self) -> dict:
        return {
            "z_max_m": self.z_max,
            "n_bins": self.n_bins,
            "cycles": self.cycles,
            "phi_sig": self.phi_sig,
            "phi_bkg": self.phi_bkg,
            "pulse_fwhm_s": self.pulse_fwhm,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, d: Mapping[str, Any]) -> "SensorConfig":
        keys = {"z_max_m", "n_bins", "cycles", "phi_sig", "phi_bkg", "pulse_fwhm_s", "seed"}
        unknown = set(d) - keys
        if unknown:
            raise ValueError(f"unknown sensor keys: {sorted(unknown)}")
        defaults = cls()
        return cls(
            z_max=float(d.get("z_max_m", defaults.z_max)),
            n_bins=int(d.get("n_bins", defaults.n_bins)),
            cycles=int(d.get("cycles", defaults.cycles)),
            phi_sig=float(d.get("phi_sig", defaults.phi_sig)),
            phi_bkg=float(d.get("phi_bkg", defaults.phi_bkg)),
            pulse_fwhm=float(d.get("pulse_fwhm_s", defaults.pulse_fwhm)),
            seed=int(d.get("seed", defaults.seed)),
        )


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DepthFrame:
    """Metric depth map. Invalid pixels always hold NaN."""

    depth: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        depth = np.array(self.depth, dtype=np.float32)
        if depth.ndim != 2:
            raise ValueError("depth must be 2-D (height, width)")
        if self.valid is None:
            valid = np.isfinite(depth)
        else:
            valid = np.array(self.valid, dtype=bool)
            if valid.shape != depth.shape:
                raise ValueError("valid mask shape mismatch")
            valid &= np.isfinite(depth)
        depth[~valid] = np.nan
        object.__setattr__(self, "depth", _frozen(depth))
        object.__setattr__(self, "valid", _frozen(valid))

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    def check_range(self, cfg: SensorConfig) -> None:
        d = self.depth[self.valid]
        if d.size and (d.min() < 0 or d.max() > cfg.z_max):
            raise DepthRangeError(f"depths outside [0, {cfg.z_max}]")


@dataclass(frozen=True, eq=False)
class ReflectanceFrame:
    albedo: np.ndarray

    def __post_init__(self):
        a = np.array(self.albedo, dtype=np.float32)
        if a.ndim != 2:
            raise ValueError("albedo must be 2-D")
        if np.any(~np.isfinite(a)) or a.min(initial=0) < 0 or a.max(initial=0) > 1:
            raise ValueError("albedo must lie in [0, 1]")
        object.__setattr__(self, "albedo", _frozen(a))

    @property
    def height(self) -> int:
        return self.albedo.shape[0]

    @property
    def width(self) -> int:
        return self.albedo.shape[1]


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel displacement (u along x, v along y) in pixels per frame."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=np.float32)
        v = np.array(self.v, dtype=np.float32)
        if u.shape != v.shape or u.ndim != 2:
            raise ValueError("u and v must be 2-D arrays of equal shape")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("flow must be finite")
        h, w = u.shape
        if np.abs(u).max(initial=0) > w or np.abs(v).max(initial=0) > h:
            raise ValueError("flow magnitude exceeds frame dimensions")
        object.__setattr__(self, "u", _frozen(u))
        object.__setattr__(self, "v", _frozen(v))

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]


@dataclass(frozen=True)
class SceneSequence:
    depths: tuple[DepthFrame, ...]
    albedos: tuple[ReflectanceFrame, ...]
    flows: tuple[FlowField, ...]  # flows[t] maps frame t -> t+1; len == frames - 1
    frame_interval: int = 1

    def __post_init__(self):
        n = len(self.depths)
        if n == 0 or len(self.albedos) != n or len(self.flows) != n - 1:
            raise ValueError("sequence needs n depth/albedo frames and n-1 flows")
        shape = self.depths[0].shape
        for fr in (*self.depths, *self.albedos, *self.flows):
            if (fr.height, fr.width) != shape:
                raise ValueError("all frames in a sequence must share dimensions")

    def __len__(self) -> int:
        return len(self.depths)


# -- depth <-> bin -----------------------------------------------------------

def depth_to_bin_units(d, cfg: SensorConfig):
    """Continuous position of depth ``d`` on the full grid, in bin units."""
    return np.asarray(d, dtype=np.float64) / cfg.z_max * cfg.n_bins


def bin_units_to_depth(u, cfg: SensorConfig):
    return np.asarray(u, dtype=np.float64) * cfg.z_max / cfg.n_bins


def depth_to_bin(d, cfg: SensorConfig):
    """Full-grid bin index holding depth ``d`` (floor mapping, clamped at N-1)."""
    arr = np.asarray(d, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > cfg.z_max):
        raise DepthRangeError(f"depth outside [0, {cfg.z_max}] m")
    idx = np.minimum(np.floor(depth_to_bin_units(arr, cfg)), cfg.n_bins - 1).astype(np.int64)
    return int(idx) if idx.ndim == 0 else idx


def bin_to_depth(i, cfg: SensorConfig):
    """Depth at the center of full-grid bin ``i``."""
    arr = np.asarray(i)
    if not np.issubdtype(arr.dtype, np.integer):
        raise DepthRangeError("bin index must be an integer")
    if np.any(arr < 0) or np.any(arr >= cfg.n_bins):
        raise DepthRangeError(f"bin index outside [0, {cfg.n_bins})")
    d = bin_units_to_depth(arr + 0.5, cfg)
    return float(d) if d.ndim == 0 else d


# -- synthetic scenes ------------------------------------------------------------

def _require(desc: Mapping[str, Any], key: str):
    if key not in desc:
        raise SceneSpecError(f"scene descriptor missing {key!r}")
    return desc[key]


def _dims(desc: Mapping[str, Any]) -> tuple[int, int]:
    try:
        w, h = int(desc.get("width", 16)), int(desc.get("height", 16))
    except (TypeError, ValueError) as exc:
        raise SceneSpecError(f"bad frame size: {exc}") from exc
    if w < 1 or h < 1:
        raise SceneSpecError("width and height must be positive")
    return h, w


def _check_depths(depth: np.ndarray, desc: Mapping[str, Any]) -> None:
    z_max = desc.get("z_max")
    if np.any(depth < 0) or (z_max is not None and np.any(depth > z_max)):
        raise SceneSpecError("scene depths must lie within [0, z_max]")


def _box_slices(box: Mapping[str, Any], h: int, w: int, dx: int = 0, dy: int = 0):
    x0, y0 = int(_require(box, "x")) + dx, int(_require(box, "y")) + dy
    bw, bh = int(_require(box, "w")), int(_require(box, "h"))
    xs, xe = max(x0, 0), min(x0 + bw, w)
    ys, ye = max(y0, 0), min(y0 + bh, h)
    if xs >= xe or ys >= ye:
        return None
    return slice(ys, ye), slice(xs, xe)


def generate_scene(desc: Mapping[str, Any]) -> tuple[DepthFrame, ReflectanceFrame]:
    """Build a deterministic depth/reflectance pair from a scene descriptor.

    Supported kinds: ``plane``, ``slanted``, ``staircase`` and ``boxes``.
    Every kind accepts ``width``, ``height`` (default 16) and ``albedo``.
    """
    if not isinstance(desc, Mapping):
        raise SceneSpecError("scene descriptor must be a mapping")
    kind = _require(desc, "kind")
    h, w = _dims(desc)
    albedo = np.full((h, w), float(desc.get("albedo", 0.5)))
    try:
        if kind == "plane":
            depth = np.full((h, w), float(_require(desc, "depth")))
        elif kind == "slanted":
            near, far = float(_require(desc, "near")), float(_require(desc, "far"))
            ramp = (np.arange(w) + 0.5) / w
            if desc.get("axis", "x") == "y":
                ramp = ((np.arange(h) + 0.5) / h)[:, None] * np.ones((1, w))
            depth = near + (far - near) * np.broadcast_to(ramp, (h, w))
        elif kind == "staircase":
            depths = [float(x) for x in _require(desc, "depths")]
            if not depths:
                raise SceneSpecError("staircase needs at least one step")
            albedos = desc.get("albedos")
            band = (np.arange(w) * len(depths)) // w
            depth = np.asarray(depths)[band][None, :].repeat(h, axis=0)
            if albedos is not None:
                if len(albedos) != len(depths):
                    raise SceneSpecError("staircase albedos must match depths")
                albedo = np.asarray(albedos, dtype=float)[band][None, :].repeat(h, axis=0)
        elif kind == "boxes":
            depth, albedo, _ = _render_boxes(desc, h, w, t=0)
        else:
            raise SceneSpecError(f"unknown scene kind {kind!r}")
    except (TypeError, KeyError) as exc:
        raise SceneSpecError(f"malformed {kind} descriptor: {exc}") from exc
    _check_depths(depth, desc)
    return DepthFrame(depth), ReflectanceFrame(albedo)


def _render_boxes(desc: Mapping[str, Any], h: int, w: int, t: int):
    bg = float(_require(desc, "background"))
    bg_albedo = float(desc.get("background_albedo", desc.get("albedo", 0.5)))
    depth = np.full((h, w), bg)
    albedo = np.full((h, w), bg_albedo)
    u = np.zeros((h, w))
    v = np.zeros((h, w))
    boxes: Sequence[Mapping[str, Any]] = desc.get("boxes", [])
    for box in boxes:
        vx, vy = box.get("velocity", (0, 0))
        if int(vx) != vx or int(vy) != vy:
            raise SceneSpecError("box velocities must be integer pixels per frame")
        sl = _box_slices(box, h, w, dx=int(vx) * t, dy=int(vy) * t)
        if sl is None:
            continue
        bd = float(_require(box, "depth"))
        nearer = depth[sl] > bd  # nearer surface occludes
        depth[sl] = np.where(nearer, bd, depth[sl])
        albedo[sl] = np.where(nearer, float(box.get("albedo", bg_albedo)), albedo[sl])
        u[sl] = np.where(nearer, vx, u[sl])
        v[sl] = np.where(nearer, vy, v[sl])
    return depth, albedo, (u, v)


def generate_moving_sequence(desc: Mapping[str, Any], frames: int) -> SceneSequence:
    """Render ``frames`` frames of a ``boxes`` scene whose boxes translate.

    Each box may carry an integer ``velocity`` (vx, vy); the background is
    static. Flow for frame t is exact: every pixel carries the velocity of
    the surface visible there.
    """
    if frames < 1:
        raise SceneSpecError("frames must be >= 1")
    if desc.get("kind") != "boxes":
        raise SceneSpecError("moving sequences are built from 'boxes' descriptors")
    h, w = _dims(desc)
    depths, albedos, flows = [], [], []
    for t in range(frames):
        depth, albedo, (u, v) = _render_boxes(desc, h, w, t)
        _check_depths(depth, desc)
        depths.append(DepthFrame(depth))
        albedos.append(ReflectanceFrame(albedo))
        if t < frames - 1:
            flows.append(FlowField(u, v))
    return SceneSequence(tuple(depths), tuple(albedos), tuple(flows))


def frame_bins_equal(a: DepthFrame, b: DepthFrame) -> bool:
    """Bitwise equality of two depth frames, NaN-aware."""
    return bool(
        np.array_equal(a.valid, b.valid)
        and np.array_equal(a.depth[a.valid], b.depth[b.valid])
    )


def fwhm_to_sigma(fwhm: float) -> float:
    return fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
