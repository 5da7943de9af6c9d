"""Depth priors: synthetic monocular estimates, polynomial calibration, flow warping, quantization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .scene import DepthFrame, FlowField, SensorConfig

PROVENANCE = ("monocular", "warped", "quantized", "external", "calibrated")


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PriorFrame:
    frame: DepthFrame
    provenance: str = "external"

    def __post_init__(self):
        if self.provenance not in PROVENANCE:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def depth(self) -> np.ndarray:
        return self.frame.depth

    @property
    def valid(self) -> np.ndarray:
        return self.frame.valid

    @property
    def shape(self) -> tuple[int, int]:
        return self.frame.shape


def clamp_frame(depth: np.ndarray, valid: np.ndarray, lo: float, hi: float) -> DepthFrame:
    return DepthFrame(np.clip(depth, lo, hi), valid)


@dataclass(frozen=True)
class Distortion:
    scale: float = 1.0
    offset: float = 0.0
    bias_amplitude: float = 0.0  # meters, smooth low-frequency field
    noise_sigma: float = 0.0  # meters, i.i.d. Gaussian


def _bias_field(h: int, w: int, gen: np.random.Generator) -> np.ndarray:
    """Smooth field in [-1, 1]: a product of one-period cosines with random phases."""
    px, py = gen.uniform(0, 2 * np.pi, size=2)
    x = np.cos(2 * np.pi * (np.arange(w) + 0.5) / w + px)
    y = np.cos(2 * np.pi * (np.arange(h) + 0.5) / h + py)
    return np.outer(y, x)


def synth_monocular(gt: DepthFrame, distortion: Distortion, cfg: SensorConfig, gen: np.random.Generator) -> PriorFrame:
    """Stand-in for a learned monocular estimate: affine + smooth bias + noise."""
    h, w = gt.shape
    d = gt.depth.astype(np.float64)
    prior = distortion.scale * d + distortion.offset
    if distortion.bias_amplitude:
        prior = prior + distortion.bias_amplitude * _bias_field(h, w, gen)
    if distortion.noise_sigma:
        prior = prior + gen.normal(0.0, distortion.noise_sigma, size=(h, w))
    return PriorFrame(clamp_frame(prior, gt.valid, 0.0, cfg.z_max), "monocular")


@dataclass(frozen=True)
class CalibrationFit:
    degree: int
    coefficients: tuple[float, ...]  # highest power first, prior -> metric depth
    residual_rms: float
    samples: tuple[tuple[int, int], ...]  # (x, y) pixels used

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if len(self.samples) < self.degree + 1:
            raise ValueError("need at least degree + 1 samples")

    def __call__(self, d):
        return np.polyval(self.coefficients, d)

    def to_json(self) -> dict:
        return {
            "degree": self.degree,
            "coefficients": list(self.coefficients),
            "residual_rms": self.residual_rms,
            "samples": [list(s) for s in self.samples],
        }

    @classmethod
    def from_json(cls, d: dict) -> "CalibrationFit":
        return cls(
            degree=int(d["degree"]),
            coefficients=tuple(float(c) for c in d["coefficients"]),
            residual_rms=float(d["residual_rms"]),
            samples=tuple((int(x), int(y)) for x, y in d["samples"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")


def fit_calibration(prior: PriorFrame, samples: Sequence[tuple[int, int, float]], degree: int = 1) -> CalibrationFit:
    """Least-squares polynomial mapping prior depth -> measured SPAD depth.

    ``samples`` holds (x, y, measured depth) triples.
    """
    if degree < 1:
        raise CalibrationError("degree must be >= 1")
    pts = [(int(x), int(y), float(d)) for x, y, d in samples if np.isfinite(d)]
    pts = [p for p in pts if prior.valid[p[1], p[0]]]
    if len(pts) < degree + 1:
        raise CalibrationError(f"need >= {degree + 1} usable samples, got {len(pts)}")
    xs = np.array([prior.depth[y, x] for x, y, _ in pts], dtype=np.float64)
    ys = np.array([d for _, _, d in pts])
    vander = np.vander(xs, degree + 1)
    if np.linalg.matrix_rank(vander) < degree + 1:
        raise CalibrationError("rank-deficient calibration: sampled prior depths are degenerate")
    coef, *_ = np.linalg.lstsq(vander, ys, rcond=None)
    resid = ys - vander @ coef
    return CalibrationFit(
        degree=degree,
        coefficients=tuple(float(c) for c in coef),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        samples=tuple((x, y) for x, y, _ in pts),
    )


def apply_calibration(fit: CalibrationFit, prior: PriorFrame, bounds: tuple[float, float]) -> PriorFrame:
    mapped = fit(prior.depth.astype(np.float64))
    return PriorFrame(clamp_frame(mapped, prior.valid, *bounds), "calibrated")


def calibrate_polynomial(
    prior: PriorFrame,
    samples: Sequence[tuple[int, int, float]],
    degree: int = 1,
    bounds: tuple[float, float] = (0.0, 10.0),
    fit: CalibrationFit | None = None,
) -> tuple[CalibrationFit, PriorFrame]:
    """Fit on this frame (local mode) or reuse ``fit`` from a calibration frame (global mode)."""
    if fit is None:
        fit = fit_calibration(prior, samples, degree)
    return fit, apply_calibration(fit, prior, bounds)


def sample_pixels(frame: DepthFrame, count: int, gen: np.random.Generator) -> list[tuple[int, int]]:
    """Pick up to ``count`` distinct valid pixels, returned in raster order."""
    ys, xs = np.nonzero(frame.valid)
    if len(xs) == 0:
        return []
    idx = np.sort(gen.choice(len(xs), size=min(count, len(xs)), replace=False))
    return [(int(xs[i]), int(ys[i])) for i in idx]


def warp_prior_by_flow(prev: DepthFrame, flow: FlowField) -> PriorFrame:
    """Forward-warp a depth map along the flow.

    Targets are rounded; when several sources land on one target the nearer
    depth wins; targets nobody lands on become invalid.
    """
    if prev.shape != (flow.height, flow.width):
        raise ValueError("depth and flow dimensions differ")
    h, w = prev.shape
    ys, xs = np.nonzero(prev.valid)
    tx = np.rint(xs + flow.u[ys, xs].astype(np.float64)).astype(np.int64)
    ty = np.rint(ys + flow.v[ys, xs].astype(np.float64)).astype(np.int64)
    inside = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
    out = np.full(h * w, np.inf)
    np.minimum.at(out, ty[inside] * w + tx[inside], prev.depth[ys[inside], xs[inside]].astype(np.float64))
    out = out.reshape(h, w)
    valid = np.isfinite(out)
    return PriorFrame(DepthFrame(np.where(valid, out, np.nan), valid), "warped")


@dataclass(frozen=True, eq=False)
class BucketMap:
    bucket: np.ndarray  # int per pixel, -1 where the prior is invalid
    count: int
    edges: np.ndarray = field(repr=False)

    def members(self, b: int) -> np.ndarray:
        """(y, x) coordinates of bucket ``b`` in raster order."""
        return np.argwhere(self.bucket == b)


def quantize_prior(prior: PriorFrame, buckets: int, cfg: SensorConfig) -> BucketMap:
    """Uniform depth buckets over [0, z_max]."""
    if buckets < 1:
        raise ValueError("bucket count must be >= 1")
    d = np.where(prior.valid, prior.depth, 0.0).astype(np.float64)
    ids = np.minimum(np.floor(d / cfg.z_max * buckets), buckets - 1).astype(np.int64)
    ids = np.where(prior.valid, np.maximum(ids, 0), -1)
    edges = np.linspace(0.0, cfg.z_max, buckets + 1)
    return BucketMap(ids, buckets, edges)
