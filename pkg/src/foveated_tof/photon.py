"""Photon-timing histogram synthesis: transient model, Poisson and pileup samplers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import rng as _rng
from .parallel import pmap
from .scene import DepthFrame, ReflectanceFrame, SensorConfig, depth_to_bin_units, fwhm_to_sigma

# Upper bound on uniforms drawn at once by the pileup sampler.
_PILEUP_CHUNK = 1 << 22


@dataclass(frozen=True)
class BinGrid:
    """``n`` equal bins covering full-grid bins [start, start + span)."""

    start: int
    span: int
    n: int

    def __post_init__(self):
        if self.n < 1 or self.span < 1 or self.start < 0:
            raise ValueError(f"invalid grid {self}")

    @classmethod
    def full(cls, cfg: SensorConfig) -> "BinGrid":
        return cls(0, cfg.n_bins, cfg.n_bins)

    @property
    def end(self) -> int:
        return self.start + self.span

    @property
    def width_bins(self) -> float:
        """Bin width in units of full-resolution bins."""
        return self.span / self.n

    def width_s(self, cfg: SensorConfig) -> float:
        return cfg.bin_width * self.span / self.n

    def edges(self) -> np.ndarray:
        return self.start + np.arange(self.n + 1) * self.span / self.n

    def centers(self) -> np.ndarray:
        """Bin centers in full-bin units."""
        return self.start + (np.arange(self.n) + 0.5) * (self.span / self.n)

    def sub(self, lo: int, hi: int) -> "BinGrid":
        if self.span % self.n:
            raise ValueError("sub-gating needs bins that are whole full-grid bins")
        w = self.span // self.n
        return BinGrid(self.start + lo * w, (hi - lo) * w, hi - lo)


def _grid_closes_range(grid: BinGrid, cfg: SensorConfig) -> bool:
    return grid.end == cfg.n_bins


@dataclass(frozen=True, eq=False)
class TransientModel:
    grid: BinGrid
    rates: np.ndarray  # mean photons per cycle per bin
    peak_bin: int | None  # grid index of the true-depth bin, None if outside
    signal_mass: float  # phi_sig * albedo
    background_per_bin: float
    bin_width_s: float


@dataclass(frozen=True, eq=False)
class Histogram:
    grid: BinGrid
    counts: np.ndarray
    cycles_used: int
    bin_width_s: float

    @property
    def start_bin(self) -> int:
        return self.grid.start

    def __len__(self) -> int:
        return len(self.counts)


def pulse_shape(u: float, grid: BinGrid, cfg: SensorConfig) -> np.ndarray:
    """Fraction of the pulse falling in each bin of ``grid``.

    ``u`` is the true time of flight in full-bin units. Tails beyond the
    measurement range fold into the first/last full-range bins, so the
    shape sums to one over the full grid.
    """
    out = np.zeros(grid.n)
    closes = _grid_closes_range(grid, cfg)
    sigma = fwhm_to_sigma(cfg.pulse_fwhm) / cfg.bin_width
    if sigma == 0:
        k = int(np.floor((u - grid.start) * (grid.n / grid.span)))
        if k == grid.n and closes and u >= grid.end:
            k = grid.n - 1
        if 0 <= k < grid.n:
            out[k] = 1.0
        return out
    edges = grid.edges()
    cdf = ndtr((edges - u) / sigma)
    cdf[edges <= 0] = 0.0
    if closes:
        cdf[-1] = 1.0
    return np.diff(cdf)


def build_transient(depth: float, albedo: float, cfg: SensorConfig, grid: BinGrid | None = None) -> TransientModel:
    """Per-bin mean photon rate for one pixel on ``grid`` (default full grid)."""
    grid = grid or BinGrid.full(cfg)
    if not 0 <= depth <= cfg.z_max:
        raise ValueError(f"depth {depth} outside [0, {cfg.z_max}]")
    u = float(depth_to_bin_units(depth, cfg))
    g = pulse_shape(u, grid, cfg)
    signal = cfg.phi_sig * float(albedo)
    bkg = cfg.phi_bkg * grid.width_bins
    peak = int(np.argmax(g)) if g.any() else None
    return TransientModel(
        grid=grid,
        rates=signal * g + bkg,
        peak_bin=peak,
        signal_mass=signal,
        background_per_bin=bkg,
        bin_width_s=grid.width_s(cfg),
    )


def sample_poisson(model: TransientModel, cycles: int, gen: np.random.Generator) -> Histogram:
    """Low-flux capture: independent Poisson counts per bin with mean C * rate."""
    counts = gen.poisson(cycles * model.rates).astype(np.int64)
    return Histogram(model.grid, counts, cycles, model.bin_width_s)


def sample_pileup(
    model: TransientModel,
    cycles: int,
    gen: np.random.Generator,
    gate: tuple[int, int] | None = None,
) -> Histogram:
    """Strong-flux capture with one detection per cycle.

    Each cycle scans the gated bins in time order; bin q fires with
    probability 1 - exp(-rate[q]) if nothing fired earlier in the gate.
    Photons before the gate are discarded by gating and never block.
    """
    lo, hi = gate if gate is not None else (0, model.grid.n)
    if not 0 <= lo < hi <= model.grid.n:
        raise ValueError(f"gate [{lo}, {hi}) outside grid of {model.grid.n} bins")
    p_fire = -np.expm1(-model.rates[lo:hi])
    nb = hi - lo
    counts = np.zeros(nb, dtype=np.int64)
    per_chunk = max(1, _PILEUP_CHUNK // nb)
    done = 0
    while done < cycles:
        c = min(per_chunk, cycles - done)
        hit = gen.random((c, nb)) < p_fire
        first = np.argmax(hit, axis=1)
        counts += np.bincount(first[hit.any(axis=1)], minlength=nb)
        done += c
    grid = model.grid if (lo, hi) == (0, model.grid.n) else model.grid.sub(lo, hi)
    return Histogram(grid, counts, cycles, model.bin_width_s)


def pseudo_intensity(cube) -> np.ndarray:
    """Total counts per pixel, normalised by the frame maximum.

    ``cube`` is a (height, width, bins) count array or a 2-D nested list of
    Histograms.
    """
    if isinstance(cube, np.ndarray):
        totals = cube.sum(axis=-1, dtype=np.float64)
    else:
        totals = np.array([[float(h.counts.sum()) for h in row] for row in cube])
    peak = totals.max(initial=0.0)
    return totals / peak if peak > 0 else np.zeros_like(totals)


def simulate_cube(
    depth: DepthFrame,
    albedo: ReflectanceFrame,
    cfg: SensorConfig,
    frame: int = 0,
    purpose: int = _rng.CAPTURE,
) -> np.ndarray:
    """Full-resolution Poisson photon cube (height, width, N) as uint32.

    Invalid depth pixels record background only.
    """
    h, w = depth.shape
    grid = BinGrid.full(cfg)

    def one(idx):
        y, x = divmod(idx, w)
        gen = _rng.pixel_stream(cfg.seed, x, y, frame, purpose)
        if depth.valid[y, x]:
            model = build_transient(float(depth.depth[y, x]), float(albedo.albedo[y, x]), cfg, grid)
        else:
            model = build_transient(0.0, 0.0, cfg, grid)
        return sample_poisson(model, cfg.cycles, gen).counts

    rows = pmap(one, range(h * w))
    return np.asarray(rows, dtype=np.uint32).reshape(h, w, cfg.n_bins)


def photon_counts(
    depth: DepthFrame,
    albedo: ReflectanceFrame,
    cfg: SensorConfig,
    frame: int = 0,
) -> np.ndarray:
    """Per-pixel total photon count from an in-pixel counter (no histogram).

    Equivalent in distribution to summing a full Poisson histogram, drawn
    as a single Poisson total.
    """
    h, w = depth.shape

    def one(idx):
        y, x = divmod(idx, w)
        gen = _rng.pixel_stream(cfg.seed, x, y, frame, _rng.INTENSITY)
        a = float(albedo.albedo[y, x]) if depth.valid[y, x] else 0.0
        mean = cfg.cycles * (cfg.phi_sig * a + cfg.phi_bkg * cfg.n_bins)
        return gen.poisson(mean)

    return np.asarray(pmap(one, range(h * w)), dtype=np.int64).reshape(h, w)
