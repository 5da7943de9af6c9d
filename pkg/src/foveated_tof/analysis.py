"""Closed-form SNR, pileup SBR and worst-case detection analyses, plus Monte-Carlo hooks."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from decimal import Decimal, localcontext
from fractions import Fraction

import numpy as np

from . import rng as _rng
from .photon import BinGrid, build_transient, sample_pileup
from .scene import SensorConfig

SNR_REGIMES = ("conventional", "memory", "depth", "depth-compensated")
SBR_REGIMES = ("conventional", "memory", "perfect", "depth")


class AnalysisDomainError(ValueError):
    pass


# -- SNR -----------------------------------------------------------------------

@dataclass(frozen=True)
class SnrModel:
    regime: str
    N: int
    M: int
    T: float = 1.0
    C: float = 1.0
    C_new: float | None = None  # defaults to the minimum compensating C * N^2 / M^2

    def __post_init__(self):
        if self.regime not in SNR_REGIMES:
            raise AnalysisDomainError(f"unknown SNR regime {self.regime!r}")
        if not 1 <= self.M <= self.N:
            raise AnalysisDomainError("need 1 <= M <= N")
        if self.C < 1 or (self.C_new is not None and self.C_new < 1):
            raise AnalysisDomainError("cycle counts must be >= 1")
        if self.T <= 0:
            raise AnalysisDomainError("period must be positive")

    @property
    def cycles_new(self) -> float:
        return self.C_new if self.C_new is not None else compensating_cycles(self.C, self.N, self.M)


def compensating_cycles(C: float, N: int, M: int) -> float:
    """Smallest C_new with C_new / C >= N^2 / M^2."""
    return C * (N / M) ** 2


def snr(model: SnrModel) -> float:
    """Per-bin SNR up to a unit proportionality constant (linear in C)."""
    N, M, T = model.N, model.M, model.T
    if model.regime in ("conventional", "memory"):
        return model.C * math.sqrt(T / N)
    if model.regime == "depth":
        return model.C * math.sqrt(M * T / N**2)
    return model.cycles_new * math.sqrt(M * T / N**2)


# -- SBR -----------------------------------------------------------------------

class BackgroundFree(enum.Enum):
    """Tag for an SBR with zero background in the denominator."""

    UNBOUNDED = "background-free"

    def __str__(self) -> str:
        return self.value


BACKGROUND_FREE = BackgroundFree.UNBOUNDED


@dataclass(frozen=True)
class SbrModel:
    phi_sig: float
    phi_bkg: float  # per full-width bin
    i: int  # peak bin, 1-based
    j: int = 1  # window start, 1-based
    N: int = 1000
    M: int = 1000
    regime: str = "conventional"

    def __post_init__(self):
        if self.regime not in SBR_REGIMES:
            raise AnalysisDomainError(f"unknown SBR regime {self.regime!r}")
        if self.phi_sig < 0 or self.phi_bkg < 0:
            raise AnalysisDomainError("flux must be non-negative")
        if not 1 <= self.M <= self.N:
            raise AnalysisDomainError("need 1 <= M <= N")
        if self.regime == "memory" and not 1 <= self.j <= self.i <= self.N:
            raise AnalysisDomainError("memory regime needs 1 <= j <= i <= N")
        if self.i < 1 or self.j < 1:
            raise AnalysisDomainError("bin indices are 1-based")


def p_bkg(q: int, j: int, phi_bkg: float) -> float:
    """Probability the first detection in a gate starting at j is background in bin q."""
    return -math.expm1(-phi_bkg) * math.exp(-(q - j) * phi_bkg)


def _scaled(model: SbrModel) -> tuple[float, float, int]:
    """(phi_sig, phi_bkg, window start) in the regime's own bins."""
    if model.regime == "depth":
        s = model.M / model.N
        return model.phi_sig * s, model.phi_bkg * s, model.j
    if model.regime == "conventional":
        return model.phi_sig, model.phi_bkg, 1
    return model.phi_sig, model.phi_bkg, model.j


def p_sig(model: SbrModel) -> float:
    if model.regime == "perfect":
        return -math.expm1(-(model.phi_sig + model.phi_bkg))
    ps, pb, j = _scaled(model)
    return -math.expm1(-(ps + pb)) * math.exp(-(model.i - j) * pb)


def sbr(model: SbrModel):
    """SBR proportionality; returns BACKGROUND_FREE when no background can fire."""
    if model.regime == "perfect":
        return -math.expm1(-(model.phi_sig + model.phi_bkg))
    _, pb, j = _scaled(model)
    if pb == 0:
        return BACKGROUND_FREE
    if model.i < j:
        raise AnalysisDomainError("peak bin precedes the window start")
    q = np.arange(j, model.i + 1)
    denom = float(np.sum(-math.expm1(-pb) * np.exp(-(q - j) * pb)))
    return p_sig(model) / denom


def pileup_bin_probabilities(phi_bkg: float, bins: int) -> np.ndarray:
    """Closed-form p^q_bkg for q = j .. j + bins - 1 of a background-only gate."""
    q = np.arange(bins)
    return -np.expm1(-phi_bkg) * np.exp(-q * phi_bkg)


def pileup_frequencies(phi_bkg: float, bins: int, cycles: int, seed: int = 0) -> np.ndarray:
    """Monte-Carlo per-bin first-detection frequency in a background-only gate."""
    cfg = SensorConfig(n_bins=max(bins, 1), cycles=cycles, phi_sig=0.0, phi_bkg=phi_bkg, seed=seed)
    model = build_transient(0.0, 0.0, cfg, BinGrid(0, bins, bins))
    gen = _rng.stream(seed, _rng.CALIBRATION, bins)
    return sample_pileup(model, cycles, gen).counts / cycles


# -- worst case ----------------------------------------------------------------

@dataclass(frozen=True)
class WorstCaseParams:
    p_gt: float
    p_multipath: float
    p_floor: float
    M: int
    S: int

    def __post_init__(self):
        for name in ("p_gt", "p_multipath", "p_floor"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise AnalysisDomainError(f"{name}={v} outside [0, 1]")
        if self.M < 1 or self.S < 1:
            raise AnalysisDomainError("M and S must be >= 1")

    def with_p_gt(self, p: float) -> "WorstCaseParams":
        return WorstCaseParams(p, self.p_multipath, self.p_floor, self.M, self.S)


def p_detect(w: WorstCaseParams) -> float:
    return w.p_gt * (1.0 - w.p_gt * w.p_multipath) ** (w.M - 1) * w.p_floor


def p_worst(w: WorstCaseParams) -> float:
    return (1.0 - p_detect(w)) ** w.S


def _p_worst_decimal(p_gt: Decimal, w: WorstCaseParams) -> Decimal:
    # finite differences may step just outside [0, 1]
    pm, pf = Decimal(w.p_multipath), Decimal(w.p_floor)
    pd = p_gt * (1 - p_gt * pm) ** (w.M - 1) * pf
    return (1 - pd) ** w.S


def dp_worst(w: WorstCaseParams) -> float:
    """d p_worst / d p_gt in the fully reduced product form."""
    x = w.p_gt * w.p_multipath
    if x >= 1.0 and w.M < 2:
        raise AnalysisDomainError("derivative form needs p_gt * p_multipath < 1")
    return (
        w.S
        * (1.0 - p_detect(w)) ** (w.S - 1)
        * (-w.p_floor)
        * (1.0 - x) ** (w.M - 2)
        * (1.0 - w.M * w.p_gt * w.p_multipath)
    )


def dp_worst_expanded(w: WorstCaseParams) -> float:
    """Same derivative before factoring out (1 - p_gt p_mp)^(M-2)."""
    x = w.p_gt * w.p_multipath
    inner = (1.0 - x) ** (w.M - 1) + (w.M - 1) * w.p_gt * (1.0 - x) ** (w.M - 2) * (-w.p_multipath)
    return w.S * (1.0 - p_detect(w)) ** (w.S - 1) * (-w.p_floor) * inner


def dp_worst_numeric(w: WorstCaseParams, h: float = 1e-6) -> float:
    """Central difference in decimal arithmetic, so only the O(h^2) truncation error remains.

    p_worst sits within p_detect of 1, so the working precision grows with
    -log10(p_detect) to keep about 40 significant digits in the difference.
    """
    x = w.p_gt * w.p_multipath
    if w.p_gt > 0 and w.p_floor > 0 and x < 1:
        log_pd = math.log10(w.p_gt) + (w.M - 1) * math.log10(1 - x) + math.log10(w.p_floor)
    else:
        log_pd = 0.0
    with localcontext() as ctx:
        ctx.prec = 60 + max(0, math.ceil(-log_pd))
        p, step = Decimal(w.p_gt), Decimal(h)
        return float((_p_worst_decimal(p + step, w) - _p_worst_decimal(p - step, w)) / (2 * step))


@dataclass(frozen=True)
class StationaryPoint:
    p_gt: float
    kind: str  # "degenerate" or "recommended"

    def to_dict(self) -> dict:
        return {"p_gt": self.p_gt, "kind": self.kind}


@dataclass(frozen=True)
class StationaryResult:
    points: tuple[StationaryPoint, ...]
    note: str = ""

    @property
    def recommended(self) -> float | None:
        for p in self.points:
            if p.kind == "recommended":
                return p.p_gt
        return None

    def to_dict(self) -> dict:
        return {"points": [p.to_dict() for p in self.points], "recommended": self.recommended, "note": self.note}


def _exact(v) -> Fraction:
    return Fraction(repr(v)) if isinstance(v, float) else Fraction(v)


def stationary_points(p_mp: float, M: int) -> StationaryResult:
    """p_gt values zeroing dp_worst: 1/p_mp (degenerate) and 1/(M p_mp) (recommended), kept if in [0, 1].

    Computed in exact rationals from the decimal inputs, then rounded once.
    """
    if M < 1:
        raise AnalysisDomainError("M must be >= 1")
    if not 0.0 <= p_mp <= 1.0:
        raise AnalysisDomainError("p_multipath outside [0, 1]")
    if p_mp == 0:
        return StationaryResult((), "p_multipath = 0: no finite stationary points")
    pm = _exact(p_mp)
    cands = [(1 / pm, "degenerate"), (1 / (M * pm), "recommended")]
    pts = tuple(StationaryPoint(float(v), kind) for v, kind in cands if 0 <= v <= 1)
    note = "" if pts else "no stationary point inside [0, 1]"
    return StationaryResult(pts, note)


def worstcase_report(p_mp: float, M: int, p_floor: float = 1.0, S: int = 1, p_gt: float | None = None) -> dict:
    """JSON-ready summary: stationary points and p_worst at each of them (and at ``p_gt``)."""
    res = stationary_points(p_mp, M)
    out = res.to_dict()
    for pt, d in zip(res.points, out["points"]):
        w = WorstCaseParams(pt.p_gt, p_mp, p_floor, M, S)
        d["p_detect"] = p_detect(w)
        d["p_worst"] = p_worst(w)
    out.update({"M": M, "p_multipath": p_mp, "p_floor": p_floor, "S": S})
    if p_gt is not None:
        w = WorstCaseParams(p_gt, p_mp, p_floor, M, S)
        out["at"] = {"p_gt": p_gt, "p_detect": p_detect(w), "p_worst": p_worst(w), "dp_worst": dp_worst(w)}
    return out


# -- Monte-Carlo SNR hooks -----------------------------------------------------

def peak_bin_snr(counts: np.ndarray) -> float:
    """mean / std over replicates of one bin's counts."""
    c = np.asarray(counts, dtype=np.float64)
    sd = c.std(ddof=1)
    return float(c.mean() / sd) if sd > 0 else math.inf


def replicate_peak_counts(
    depth: float,
    cfg: SensorConfig,
    grid: BinGrid,
    replicates: int,
    frame: int = 0,
) -> np.ndarray:
    """Counts in the true-depth bin of ``grid`` over independent replicate pixels.

    Replicate r uses the stream of pixel (r, 0); whole-bin gates slice the
    full-grid draw so memory-mode counts coincide with conventional ones.
    """
    from .foveation import capture_foveated

    model = build_transient(depth, 1.0, cfg, grid)
    if model.peak_bin is None:
        raise AnalysisDomainError("depth falls outside the gate")
    out = np.empty(replicates, dtype=np.int64)
    for r in range(replicates):
        gen = _rng.pixel_stream(cfg.seed, r, 0, frame)
        out[r] = capture_foveated(depth, 1.0, grid, cfg, gen).counts[model.peak_bin]
    return out
