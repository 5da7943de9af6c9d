"""Parameter sweeps producing CSV tables."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import analysis as an
from . import rng as _rng
from .decode import evaluate
from .foveation import foveate, parse_fraction, plan_fovea, window_bins
from .priors import Distortion, synth_monocular
from .scene import DepthFrame, SensorConfig, generate_scene

SWEEP_KINDS = ("snr", "sbr", "worstcase", "sim-quality")


@dataclass
class Table:
    columns: tuple[str, ...]
    rows: list[tuple]

    def column(self, name: str) -> list:
        k = self.columns.index(name)
        return [r[k] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_cell(v) for v in r])
        return buf.getvalue()


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, Fraction):
        return f"{v.numerator}/{v.denominator}"
    return str(v)


def _need(values: Sequence, name: str):
    if len(values) == 0:
        raise ValueError(f"empty sweep axis {name!r}")


def snr_sweep(N: int, Ms: Sequence[int], C: float = 1.0, T: float = 1.0) -> Table:
    _need(Ms, "M")
    rows = []
    for M in Ms:
        vals = [an.snr(an.SnrModel(r, N, M, T, C)) for r in an.SNR_REGIMES]
        rows.append((N, M, *vals, vals[2] / vals[0]))
    return Table(("N", "M", *an.SNR_REGIMES, "depth_over_conventional"), rows)


def sbr_sweep(phi_sig: float, phi_bkg: float, peaks: Sequence[int], N: int = 1000, M: int = 62, j: int = 1) -> Table:
    """SBR of each regime per peak bin; memory windows start at max(j, i - M + 1)."""
    _need(peaks, "i")
    rows = []
    for i in peaks:
        start = max(j, i - M + 1)
        vals = []
        for regime in an.SBR_REGIMES:
            v = an.sbr(an.SbrModel(phi_sig, phi_bkg, i, start if regime == "memory" else 1, N, M, regime))
            vals.append(str(v) if isinstance(v, an.BackgroundFree) else v)
        rows.append((i, *vals))
    return Table(("i", *an.SBR_REGIMES), rows)


def worstcase_sweep(M: int, p_mp: float, p_floor: float, S: int, points: int = 1001) -> Table:
    if points < 2:
        raise ValueError("need at least two p_gt points")
    rows = []
    for p in np.linspace(0.0, 1.0, points):
        w = an.WorstCaseParams(float(p), p_mp, p_floor, M, S)
        rows.append((float(p), an.p_detect(w), an.p_worst(w), an.dp_worst(w)))
    return Table(("p_gt", "p_detect", "p_worst", "dp_worst"), rows)


SIM_SCENE = {
    "kind": "boxes",
    "width": 32,
    "height": 32,
    "background": 7.5,
    "background_albedo": 0.6,
    "boxes": [
        {"x": 4, "y": 6, "w": 12, "h": 10, "depth": 3.0, "albedo": 0.9},
        {"x": 18, "y": 16, "w": 10, "h": 12, "depth": 5.2, "albedo": 0.5},
    ],
}
SIM_DISTORTION = Distortion(scale=1.0, offset=0.0, bias_amplitude=0.05, noise_sigma=0.1)


SIM_SENSOR = SensorConfig(phi_sig=1.0, phi_bkg=0.001, pulse_fwhm=1e-9)


def sweeps_base_sensor(overrides: dict) -> SensorConfig:
    """Sim-quality sensor: defaults above, with RunConfig-style sensor keys applied."""
    d = SIM_SENSOR.to_json_dict()
    d.update(overrides)
    return SensorConfig.from_json_dict(d)


def _score(pred: DepthFrame, gt: DepthFrame) -> tuple[float, float]:
    # undecodable pixels count as depth zero so misses are not hidden
    filled = DepthFrame(np.where(pred.valid, pred.depth, 0.0))
    m = evaluate(filled, gt)
    return m.ssd, m.rmse


def sim_quality_sweep(
    exposures: Sequence[int],
    fractions: Sequence,
    seeds: Sequence[int] = (0,),
    base: SensorConfig | None = None,
    scene: dict | None = None,
    distortion: Distortion = SIM_DISTORTION,
    decoder: str = "argmax",
) -> Table:
    """End-to-end SSD per (seed, exposure, fraction) with memory foveation around a noisy prior."""
    _need(exposures, "cycles")
    _need(fractions, "fraction")
    _need(seeds, "seed")
    base = base or SIM_SENSOR
    gt, albedo = generate_scene(scene or SIM_SCENE)
    rows = []
    for seed, cycles, f in itertools.product(seeds, exposures, fractions):
        frac = parse_fraction(f)
        cfg = base.replace(cycles=int(cycles), seed=int(seed))
        prior = synth_monocular(gt, distortion, cfg, _rng.stream(seed, _rng.PRIOR))
        res = foveate(gt, albedo, plan_fovea(prior, frac, "memory", cfg), cfg, decoder=decoder)
        ssd, rmse = _score(res.depth, gt)
        rows.append((seed, int(cycles), frac, window_bins(frac, cfg.n_bins), ssd, rmse, res.memory.bins_recorded))
    return Table(("seed", "cycles", "fraction", "M", "ssd", "rmse", "bins"), rows)
