"""Depth decoding from histograms, evaluation metrics and memory accounting."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .photon import BinGrid, Histogram
from .scene import DepthFrame, SensorConfig, bin_units_to_depth, fwhm_to_sigma


class DecodeError(ValueError):
    pass


class MetricsError(ValueError):
    pass


def _center_depth(grid: BinGrid, k: int, cfg: SensorConfig) -> float:
    return float(bin_units_to_depth(grid.start + (k + 0.5) * (grid.span / grid.n), cfg))


def decode_argmax(h: Histogram, cfg: SensorConfig) -> float:
    """Depth at the center of the max-count bin; NaN for an all-zero histogram.

    Ties resolve to the earliest bin.
    """
    if len(h.counts) == 0:
        raise DecodeError("empty histogram")
    k = int(np.argmax(h.counts))
    if h.counts[k] <= 0:
        return math.nan
    return _center_depth(h.grid, k, cfg)


def pulse_kernel(grid: BinGrid, cfg: SensorConfig) -> np.ndarray | None:
    """Discrete Gaussian pulse at the grid's bin width, or None below one bin."""
    sigma = fwhm_to_sigma(cfg.pulse_fwhm) / cfg.bin_width / grid.width_bins
    if cfg.pulse_fwhm < grid.width_s(cfg):
        return None
    half = max(1, int(math.ceil(4 * sigma)))
    x = np.arange(-half, half + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def decode_matched(h: Histogram, cfg: SensorConfig) -> float:
    """Matched-filter decode: correlate with the pulse, take the maximum."""
    if len(h.counts) == 0:
        raise DecodeError("empty histogram")
    kern = pulse_kernel(h.grid, cfg)
    if kern is None:
        return decode_argmax(h, cfg)
    if not np.any(h.counts > 0):
        return math.nan
    # full convolution sliced back to the input bins; "same" misaligns when the kernel is longer
    half = len(kern) // 2
    corr = np.convolve(h.counts.astype(np.float64), kern)[half:half + len(h.counts)]
    return _center_depth(h.grid, int(np.argmax(corr)), cfg)


DECODERS = {"argmax": decode_argmax, "matched": decode_matched}


def decode_frame(histograms: Sequence[Sequence[Histogram]], cfg: SensorConfig, method: str = "argmax") -> DepthFrame:
    try:
        fn = DECODERS[method]
    except KeyError:
        raise DecodeError(f"unknown decoder {method!r}") from None
    depth = np.array([[fn(h, cfg) if h is not None else math.nan for h in row] for row in histograms])
    return DepthFrame(depth)


# -- metrics -----------------------------------------------------------------

@dataclass(frozen=True)
class MetricsReport:
    rmse: float
    log10: float
    abs_rel: float
    delta1: float
    delta2: float
    delta3: float
    ssd: float
    pixels: int

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(pred: DepthFrame, gt: DepthFrame) -> MetricsReport:
    """Standard depth-map metrics over pixels valid in both frames."""
    if pred.shape != gt.shape:
        raise MetricsError(f"shape mismatch {pred.shape} vs {gt.shape}")
    both = pred.valid & gt.valid
    if not both.any():
        raise MetricsError("no overlapping valid pixels")
    p = pred.depth[both].astype(np.float64)
    g = gt.depth[both].astype(np.float64)
    err = p - g
    ssd = float(np.sum(err**2))
    rmse = math.sqrt(ssd / err.size)
    pos = (p > 0) & (g > 0)
    if pos.any():
        pp, gg = p[pos], g[pos]
        log10 = float(np.mean(np.abs(np.log10(gg) - np.log10(pp))))
        abs_rel = float(np.mean(np.abs(gg - pp) / gg))
        ratio = np.maximum(pp / gg, gg / pp)
        d1, d2, d3 = (100.0 * float(np.mean(ratio < 1.25**k)) for k in (1, 2, 3))
    else:
        log10 = abs_rel = d1 = d2 = d3 = math.nan
    return MetricsReport(rmse, log10, abs_rel, d1, d2, d3, ssd, int(err.size))


# -- memory ------------------------------------------------------------------

BYTES_PER_BIN = 1


@dataclass(frozen=True)
class MemoryReport:
    bins_recorded: int
    baseline_bins: int

    def __post_init__(self):
        if self.bins_recorded < 0 or self.baseline_bins < 0:
            raise ValueError("bin counts must be non-negative")

    @property
    def bytes_recorded(self) -> int:
        return self.bins_recorded * BYTES_PER_BIN

    @property
    def reduction(self) -> Fraction:
        """Exact baseline/recorded ratio."""
        if self.bins_recorded == 0:
            raise ZeroDivisionError("nothing recorded")
        return Fraction(self.baseline_bins, self.bins_recorded)

    def to_dict(self) -> dict:
        r = self.reduction
        return {
            "bins_recorded": self.bins_recorded,
            "bytes_recorded": self.bytes_recorded,
            "baseline_bins": self.baseline_bins,
            "reduction_factor": float(r),
            "reduction_exact": f"{r.numerator}/{r.denominator}",
        }

    def __add__(self, other: "MemoryReport") -> "MemoryReport":
        return MemoryReport(self.bins_recorded + other.bins_recorded, self.baseline_bins + other.baseline_bins)


def baseline_bins(width: int, height: int, cfg: SensorConfig) -> int:
    return width * height * cfg.n_bins


def memory_for_fovea(width: int, height: int, window: int, cfg: SensorConfig) -> MemoryReport:
    return MemoryReport(width * height * window, baseline_bins(width, height, cfg))


def memory_for_quantized(samples_per_bucket: Iterable[int], window: int, width: int, height: int, cfg: SensorConfig) -> MemoryReport:
    recorded = sum(int(s) * window for s in samples_per_bucket)
    return MemoryReport(recorded, baseline_bins(width, height, cfg))


def memory_for_superpixel(segments: int, width: int, height: int, window: int, cfg: SensorConfig) -> MemoryReport:
    pixels = width * height
    return MemoryReport(segments * cfg.n_bins + (pixels - segments) * window, baseline_bins(width, height, cfg))


def memory_from_histograms(histograms: Iterable[Histogram | None], width: int, height: int, cfg: SensorConfig) -> MemoryReport:
    """Exact count of every bin actually recorded in a capture log."""
    recorded = sum(len(h.counts) for h in histograms if h is not None)
    return MemoryReport(recorded, baseline_bins(width, height, cfg))


CSV_COLUMNS = ("rmse", "log10", "rel", "d1", "d2", "d3", "ssd", "pixels", "bins", "factor")


def report_row(metrics: MetricsReport, memory: MemoryReport | None = None) -> dict:
    return {
        "rmse": metrics.rmse,
        "log10": metrics.log10,
        "rel": metrics.abs_rel,
        "d1": metrics.delta1,
        "d2": metrics.delta2,
        "d3": metrics.delta3,
        "ssd": metrics.ssd,
        "pixels": metrics.pixels,
        "bins": memory.bins_recorded if memory else "",
        "factor": float(memory.reduction) if memory else "",
    }


def report_csv(metrics: MetricsReport, memory: MemoryReport | None = None) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in report_row(metrics, memory).items()})
    return buf.getvalue()
