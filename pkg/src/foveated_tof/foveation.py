"""Foveation policies: window planning, gated capture and spatio-temporal variants."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import rng as _rng
from .decode import (
    MemoryReport,
    decode_frame,
    memory_from_histograms,
)
from .parallel import pmap
from .photon import BinGrid, Histogram, build_transient, photon_counts, sample_pileup, sample_poisson
from .priors import BucketMap, PriorFrame, quantize_prior, warp_prior_by_flow
from .scene import DepthFrame, FlowField, ReflectanceFrame, SceneSequence, SensorConfig, depth_to_bin
from .superpixel import SuperpixelMap, superpixels

MODES = ("memory", "depth", "full", "limited")
SAMPLERS = ("poisson", "pileup")


def parse_fraction(f) -> Fraction:
    """Accept 1/16, 0.0625, "1/16" or "0.0625"; must lie in (0, 1]."""
    if isinstance(f, Fraction):
        frac = f
    elif isinstance(f, float):
        frac = Fraction(repr(f))
    else:
        frac = Fraction(str(f).strip())
    if not 0 < frac <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {f}")
    return frac


def window_bins(fraction, n_bins: int) -> int:
    """M = floor(f * N), at least one bin."""
    return max(1, math.floor(parse_fraction(fraction) * n_bins))


def center_window(center_bin, window: int, n_bins: int):
    """Start bin of a ``window``-wide gate centered on ``center_bin``, shifted to fit."""
    return np.clip(np.asarray(center_bin) - window // 2, 0, n_bins - window)


@dataclass(frozen=True, eq=False)
class FoveationPlan:
    start: np.ndarray  # (h, w) first full-grid bin of each window
    window: int  # M, in full-width bins
    mode: str
    n_sub: int | None  # N' for depth / limited modes
    fallback: np.ndarray  # (h, w) bool: capture on the full grid

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode in ("depth", "limited") and (self.n_sub is None or self.n_sub < 1):
            raise ValueError(f"{self.mode} mode needs n_sub >= 1")

    @property
    def shape(self) -> tuple[int, int]:
        return self.fallback.shape

    def grid(self, y: int, x: int, cfg: SensorConfig) -> BinGrid:
        if self.mode == "full" or self.fallback[y, x]:
            return BinGrid.full(cfg)
        if self.mode == "limited":
            return BinGrid(0, cfg.n_bins, self.n_sub)
        j = int(self.start[y, x])
        if self.mode == "memory":
            return BinGrid(j, self.window, self.window)
        return BinGrid(j, self.window, self.n_sub)

    def bins_per_pixel(self, cfg: SensorConfig) -> np.ndarray:
        per = {"memory": self.window, "depth": self.n_sub, "limited": self.n_sub, "full": cfg.n_bins}[self.mode]
        return np.where(self.fallback | (self.mode == "full"), cfg.n_bins, per)

    def memory(self, cfg: SensorConfig) -> MemoryReport:
        h, w = self.shape
        return MemoryReport(int(self.bins_per_pixel(cfg).sum()), h * w * cfg.n_bins)


def plan_from_bins(center_bins: np.ndarray, usable: np.ndarray, fraction, mode: str, cfg: SensorConfig, n_sub: int | None = None) -> FoveationPlan:
    m = window_bins(fraction, cfg.n_bins)
    centers = np.where(usable, center_bins, 0)
    start = center_window(centers, m, cfg.n_bins).astype(np.int64)
    return FoveationPlan(start, m, mode, n_sub, ~np.asarray(usable, dtype=bool))


def plan_fovea(prior: PriorFrame | DepthFrame, fraction, mode: str, cfg: SensorConfig, n_sub: int | None = None) -> FoveationPlan:
    """Center an M-bin window on each prior depth; invalid priors fall back to the full grid."""
    if mode not in ("memory", "depth"):
        raise ValueError("plan_fovea builds memory or depth plans")
    if mode == "depth" and (n_sub is None or n_sub < 1):
        raise ValueError("depth mode needs n_sub >= 1")
    frame = prior.frame if isinstance(prior, PriorFrame) else prior
    d = np.where(frame.valid, frame.depth, 0.0)
    d = np.clip(d, 0.0, cfg.z_max)  # priors are already clamped; guards float32 round-up
    return plan_from_bins(depth_to_bin(d, cfg), frame.valid, fraction, mode, cfg, n_sub)


def full_plan(shape: tuple[int, int], cfg: SensorConfig) -> FoveationPlan:
    return FoveationPlan(np.zeros(shape, np.int64), cfg.n_bins, "full", None, np.zeros(shape, bool))


def limited_plan(shape: tuple[int, int], n_sub: int, cfg: SensorConfig) -> FoveationPlan:
    """Unfoveated baseline: N' coarse bins spread over the whole range."""
    return FoveationPlan(np.zeros(shape, np.int64), cfg.n_bins, "limited", n_sub, np.zeros(shape, bool))


# -- capture -----------------------------------------------------------------

def capture_foveated(
    depth: float,
    albedo: float,
    grid: BinGrid,
    cfg: SensorConfig,
    gen: np.random.Generator,
    sampler: str = "poisson",
) -> Histogram:
    """Record one pixel on ``grid``.

    Poisson captures on whole-bin grids draw the full-resolution histogram
    and keep the gated slice: gating does not change the photons that land
    inside the gate. Pileup captures see only in-gate photons, so nothing
    before the gate can block a detection.
    """
    if not np.isfinite(depth):
        depth, albedo = 0.0, 0.0
    if sampler == "poisson":
        if grid.span == grid.n:
            full = sample_poisson(build_transient(depth, albedo, cfg), cfg.cycles, gen)
            counts = full.counts[grid.start:grid.end]
            return Histogram(grid, counts, cfg.cycles, grid.width_s(cfg))
        return sample_poisson(build_transient(depth, albedo, cfg, grid), cfg.cycles, gen)
    if sampler == "pileup":
        return sample_pileup(build_transient(depth, albedo, cfg, grid), cfg.cycles, gen)
    raise ValueError(f"unknown sampler {sampler!r}")


def capture_frame(
    depth: DepthFrame,
    albedo: ReflectanceFrame,
    plan: FoveationPlan,
    cfg: SensorConfig,
    sampler: str = "poisson",
    frame: int = 0,
    purpose: int = _rng.CAPTURE,
    mask: np.ndarray | None = None,
) -> list[list[Histogram | None]]:
    """Capture every pixel (or only ``mask`` pixels) according to ``plan``."""
    h, w = depth.shape
    if plan.shape != (h, w):
        raise ValueError("plan and scene dimensions differ")

    def one(idx):
        y, x = divmod(idx, w)
        if mask is not None and not mask[y, x]:
            return None
        gen = _rng.pixel_stream(cfg.seed, x, y, frame, purpose)
        d = float(depth.depth[y, x]) if depth.valid[y, x] else math.nan
        return capture_foveated(d, float(albedo.albedo[y, x]), plan.grid(y, x, cfg), cfg, gen, sampler)

    flat = pmap(one, range(h * w))
    return [flat[r * w:(r + 1) * w] for r in range(h)]


def _flat(hists: Sequence[Sequence[Histogram | None]]) -> list[Histogram | None]:
    return [hh for row in hists for hh in row]


@dataclass(frozen=True, eq=False)
class CaptureResult:
    depth: DepthFrame
    memory: MemoryReport
    histograms: list = None
    plan: FoveationPlan | None = None


def foveate(
    depth: DepthFrame,
    albedo: ReflectanceFrame,
    plan: FoveationPlan,
    cfg: SensorConfig,
    sampler: str = "poisson",
    decoder: str = "argmax",
    frame: int = 0,
) -> CaptureResult:
    """Capture with a plan and decode: steps 3-9 of the memory/depth policy."""
    hists = capture_frame(depth, albedo, plan, cfg, sampler, frame)
    h, w = depth.shape
    return CaptureResult(decode_frame(hists, cfg, decoder), memory_from_histograms(_flat(hists), w, h, cfg), hists, plan)


def full_resolution(depth: DepthFrame, albedo: ReflectanceFrame, cfg: SensorConfig, sampler: str = "poisson", decoder: str = "argmax", frame: int = 0) -> CaptureResult:
    return foveate(depth, albedo, full_plan(depth.shape, cfg), cfg, sampler, decoder, frame)


# -- quantized spatio-temporal sampling ------------------------------------------

@dataclass(frozen=True, eq=False)
class QuantizedResult:
    depth: DepthFrame
    sparsity: float
    samples_per_bucket: tuple[int, ...]
    sampled: np.ndarray  # (h, w) bool
    memory: MemoryReport
    buckets: BucketMap


def select_bucket_samples(buckets: BucketMap, per_bucket: int, seed: int, frame: int = 0) -> list[np.ndarray]:
    """Uniform draw without replacement of min(K, size) pixels from each bucket."""
    out = []
    for b in range(buckets.count):
        members = buckets.members(b)
        k = min(per_bucket, len(members))
        if k == 0:
            out.append(members[:0])
            continue
        gen = _rng.stream(seed, _rng.SELECTION, frame, b)
        pick = np.sort(gen.choice(len(members), size=k, replace=False))
        out.append(members[pick])
    return out


def _aggregate(values: np.ndarray, how: str) -> float:
    if how == "min":
        return float(values.min())
    if how == "median":
        # lower median keeps the output one of the measured depths
        return float(np.sort(values)[(len(values) - 1) // 2])
    raise ValueError(f"unknown aggregate {how!r}")


def quantized_st_capture(
    depth: DepthFrame,
    albedo: ReflectanceFrame,
    prior: PriorFrame,
    buckets: int,
    per_bucket: int,
    fraction,
    cfg: SensorConfig,
    mode: str = "memory",
    n_sub: int | None = None,
    sampler: str = "poisson",
    decoder: str = "argmax",
    aggregate: str = "min",
    frame: int = 0,
) -> QuantizedResult:
    """Foveate a few random pixels per prior bucket; spread each bucket's minimum depth."""
    if buckets < 1 or per_bucket < 1:
        raise ValueError("buckets and samples per bucket must be >= 1")
    h, w = depth.shape
    if h * w == 0:
        raise ValueError("empty frame")
    bmap = quantize_prior(prior, buckets, cfg)
    picks = select_bucket_samples(bmap, per_bucket, cfg.seed, frame)
    sampled = np.zeros((h, w), bool)
    for p in picks:
        sampled[p[:, 0], p[:, 1]] = True
    plan = plan_fovea(prior, fraction, mode, cfg, n_sub)
    hists = capture_frame(depth, albedo, plan, cfg, sampler, frame, mask=sampled)
    decoded = decode_frame(hists, cfg, decoder)

    out = np.full((h, w), np.nan)
    for b, p in enumerate(picks):
        vals = decoded.depth[p[:, 0], p[:, 1]]
        vals = vals[np.isfinite(vals)]
        if vals.size:
            out[bmap.bucket == b] = _aggregate(vals.astype(np.float64), aggregate)
    memory = memory_from_histograms(_flat(hists), w, h, cfg)
    return QuantizedResult(
        depth=DepthFrame(out.astype(np.float32)),
        sparsity=float(sampled.sum()) / (h * w),
        samples_per_bucket=tuple(len(p) for p in picks),
        sampled=sampled,
        memory=memory,
        buckets=bmap,
    )


# -- superpixel spatio-temporal sampling ------------------------------------------

@dataclass(frozen=True, eq=False)
class SuperpixelResult:
    depth: DepthFrame
    memory: MemoryReport
    reduced_fraction: float  # pixels captured with a gated window
    segments: SuperpixelMap
    intensity: np.ndarray


def superpixel_st_capture(
    depth: DepthFrame,
    albedo: ReflectanceFrame,
    cfg: SensorConfig,
    segments: int,
    fraction=Fraction(1, 4),
    compactness: float = 10.0,
    sampler: str = "poisson",
    decoder: str = "argmax",
    frame: int = 0,
) -> SuperpixelResult:
    """Pseudo-intensity -> superpixels -> full histogram at each centroid -> gated rest.

    Segments whose centroid histogram is empty cannot place a window; their
    pixels are captured on the full grid.
    """
    h, w = depth.shape
    totals = photon_counts(depth, albedo, cfg, frame)
    intensity = totals / totals.max() if totals.max() > 0 else np.zeros((h, w))
    sp = superpixels(intensity, segments, compactness)

    centroid_mask = np.zeros((h, w), bool)
    for x, y in sp.centroids:
        centroid_mask[y, x] = True
    full = capture_frame(depth, albedo, full_plan((h, w), cfg), cfg, sampler, frame, mask=centroid_mask)

    peak = np.zeros(sp.count, dtype=np.int64)
    usable_seg = np.zeros(sp.count, bool)
    for k, (x, y) in enumerate(sp.centroids):
        counts = full[y][x].counts
        if counts.max() > 0:
            peak[k] = int(np.argmax(counts))
            usable_seg[k] = True
    usable = usable_seg[sp.labels]
    plan = plan_from_bins(peak[sp.labels], usable, fraction, "memory", cfg)
    rest = capture_frame(depth, albedo, plan, cfg, sampler, frame, mask=~centroid_mask)

    merged = [[full[y][x] if centroid_mask[y, x] else rest[y][x] for x in range(w)] for y in range(h)]
    decoded = decode_frame(merged, cfg, decoder)
    memory = memory_from_histograms(_flat(merged), w, h, cfg)
    reduced = float(np.sum(~centroid_mask & usable)) / (h * w)
    return SuperpixelResult(decoded, memory, reduced, sp, intensity)


# -- optical-flow driven capture -------------------------------------------------

@dataclass(frozen=True, eq=False)
class FlowResult:
    depth: DepthFrame
    error_mask: np.ndarray
    memory: MemoryReport
    prior: PriorFrame


def expected_background(grid_width_bins: float, cfg: SensorConfig) -> float:
    """Mean background count per recorded bin over the whole exposure."""
    return cfg.cycles * cfg.phi_bkg * grid_width_bins


def noise_floor_flags(hists, plan: FoveationPlan, tau: float, cfg: SensorConfig) -> np.ndarray:
    """True where the gated window looks like background only (max <= tau * mean)."""
    h, w = plan.shape
    flags = np.zeros((h, w), bool)
    if tau <= 0:
        return flags
    for y in range(h):
        for x in range(w):
            hh = hists[y][x]
            if hh is None or plan.fallback[y, x]:
                continue
            floor = tau * expected_background(hh.grid.width_bins, cfg)
            flags[y, x] = hh.counts.max() <= floor
    return flags


def flow_capture(
    prev_depth: DepthFrame,
    flow: FlowField,
    depth: DepthFrame,
    albedo: ReflectanceFrame,
    fraction,
    cfg: SensorConfig,
    tau: float = 3.0,
    fallback: bool = True,
    sampler: str = "poisson",
    decoder: str = "argmax",
    frame: int = 1,
) -> FlowResult:
    """Warp the previous depth into a prior, gate around it, recapture suspicious pixels.

    With ``fallback`` off (warp-only), holes left by the warp inherit the
    previous depth at the same pixel and nothing is recaptured; the error
    mask is still reported.
    """
    warped = warp_prior_by_flow(prev_depth, flow)
    hole = ~warped.valid
    if fallback:
        prior = warped
    else:
        filled = np.where(hole, prev_depth.depth, warped.depth)
        prior = PriorFrame(DepthFrame(filled), "warped")
    plan = plan_fovea(prior, fraction, "memory", cfg)
    hists = capture_frame(depth, albedo, plan, cfg, sampler, frame)
    mask = hole | noise_floor_flags(hists, plan, tau, cfg)

    log = _flat(hists)
    if fallback:
        redo = mask & ~plan.fallback
        if redo.any():
            again = capture_frame(depth, albedo, full_plan(depth.shape, cfg), cfg, sampler, frame, _rng.RECAPTURE, mask=redo)
            log += [hh for hh in _flat(again) if hh is not None]
            hists = [[again[y][x] if redo[y, x] else hists[y][x] for x in range(len(row))] for y, row in enumerate(hists)]
    h, w = depth.shape
    return FlowResult(decode_frame(hists, cfg, decoder), mask, memory_from_histograms(log, w, h, cfg), prior)


@dataclass(frozen=True, eq=False)
class SequenceResult:
    depths: tuple[DepthFrame, ...]
    masks: tuple[np.ndarray, ...]
    memory: tuple[MemoryReport, ...]


def flow_sequence(
    seq: SceneSequence,
    fraction,
    cfg: SensorConfig,
    tau: float = 3.0,
    fallback: bool = True,
    sampler: str = "poisson",
    decoder: str = "argmax",
) -> SequenceResult:
    """Frame 0 at full resolution, then flow-driven foveation frame to frame."""
    first = full_resolution(seq.depths[0], seq.albedos[0], cfg, sampler, decoder, frame=0)
    depths = [first.depth]
    masks = [np.zeros(first.depth.shape, bool)]
    memory = [first.memory]
    for t in range(1, len(seq)):
        res = flow_capture(
            depths[-1], seq.flows[t - 1], seq.depths[t], seq.albedos[t], fraction, cfg,
            tau=tau, fallback=fallback, sampler=sampler, decoder=decoder, frame=t,
        )
        depths.append(res.depth)
        masks.append(res.error_mask)
        memory.append(res.memory)
    return SequenceResult(tuple(depths), tuple(masks), tuple(memory))


def disocclusion_mask(seq: SceneSequence, t: int) -> np.ndarray:
    """Pixels of frame ``t`` not reached by forward-warping frame t-1 with exact flow."""
    return ~warp_prior_by_flow(seq.depths[t - 1], seq.flows[t - 1]).valid


POLICIES: dict[str, Callable] = {
    "quantized": quantized_st_capture,
    "superpixel": superpixel_st_capture,
}
