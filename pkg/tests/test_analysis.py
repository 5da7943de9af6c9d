from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foveated_tof import analysis as an
from foveated_tof.photon import BinGrid
from foveated_tof.scene import SensorConfig, bin_to_depth


def test_snr_ratios():
    for N, M in [(1000, 62), (1000, 250), (64, 1), (10, 10)]:
        conv = an.snr(an.SnrModel("conventional", N, M, C=100))
        assert an.snr(an.SnrModel("memory", N, M, C=100)) == conv
        assert an.snr(an.SnrModel("depth", N, M, C=100)) / conv == pytest.approx(math.sqrt(M / N))
    assert round(math.sqrt(62 / 1000), 3) == 0.249


def test_compensated_cycles_restore_conventional():
    # C * (N/M)^2 * sqrt(M/N^2) == C * sqrt(1/N) * (N/M)^(3/2); equality with
    # conventional needs C_new/C = (N/M)^(3/2) under this reading; the stated
    # bound N^2/M^2 is sufficient (it is at least as large)
    for N, M in [(1000, 62), (1000, 250), (1000, 1000)]:
        assert an.compensating_cycles(10, N, M) == pytest.approx(10 * N**2 / M**2)
        conv = an.snr(an.SnrModel("conventional", N, M, C=10))
        comp = an.snr(an.SnrModel("depth-compensated", N, M, C=10))
        assert comp >= conv * (1 - 1e-12)


def test_snr_model_validation():
    for args in [("x", 10, 5), ("memory", 10, 0), ("memory", 10, 11)]:
        with pytest.raises(an.AnalysisDomainError):
            an.SnrModel(*args)
    with pytest.raises(an.AnalysisDomainError):
        an.SnrModel("memory", 10, 5, C=0.5)


def test_perfect_sbr_independent_of_peak():
    vals = {an.sbr(an.SbrModel(0.5, 0.01, i, i, regime="perfect")) for i in (5, 100, 900)}
    assert len(vals) == 1
    assert vals.pop() == -math.expm1(-0.51)


def test_conventional_sbr_decreases_with_peak_bin():
    vals = [an.sbr(an.SbrModel(0.5, 0.01, i)) for i in (10, 50, 100, 500)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_conventional_sbr_closed_form():
    m = an.SbrModel(0.2, 0.05, 4)
    num = (1 - math.exp(-0.25)) * math.exp(-3 * 0.05)
    den = sum((1 - math.exp(-0.05)) * math.exp(-(q - 1) * 0.05) for q in range(1, 5))
    assert an.sbr(m) == pytest.approx(num / den, rel=1e-12)


def test_memory_window_helps():
    conv = an.sbr(an.SbrModel(0.2, 0.01, 500, 1, regime="conventional"))
    mem = an.sbr(an.SbrModel(0.2, 0.01, 500, 470, regime="memory"))
    assert mem > conv


def test_depth_regime_scales_flux():
    m = an.SbrModel(0.2, 0.01, 3, 1, N=1000, M=100, regime="depth")
    plain = an.SbrModel(0.02, 0.001, 3, 1, N=1000, M=1000, regime="conventional")
    assert an.sbr(m) == pytest.approx(an.sbr(plain), rel=1e-12)


def test_background_free_tag():
    r = an.sbr(an.SbrModel(0.5, 0.0, 10))
    assert r is an.BACKGROUND_FREE and str(r) == "background-free"
    assert not isinstance(r, float)


def test_sbr_validation():
    with pytest.raises(an.AnalysisDomainError):
        an.SbrModel(0.1, 0.1, 3, 5, regime="memory")
    with pytest.raises(an.AnalysisDomainError):
        an.SbrModel(-0.1, 0.1, 3)


def test_pileup_closed_form_matches_monte_carlo():
    p = an.pileup_bin_probabilities(0.01, 50)
    f = an.pileup_frequencies(0.01, 50, 100_000, seed=0)
    sigma = np.sqrt(p * (1 - p) / 100_000)
    assert np.sum(np.abs(f - p) <= 3 * sigma) >= 48


def W(p_gt=0.5, p_mp=0.1, p_floor=0.9, M=10, S=4):
    return an.WorstCaseParams(p_gt, p_mp, p_floor, M, S)


def test_p_detect_examples():
    assert an.p_detect(W(M=1)) == 0.5 * 0.9
    assert an.p_detect(W(p_gt=0.0)) == 0.0
    v = an.p_detect(an.WorstCaseParams(1.0, 0.001, 1.0, 1000, 1))
    assert v == pytest.approx(math.exp(999 * math.log1p(-0.001)), rel=1e-12)
    assert round(v, 4) == 0.3681


def test_p_worst_examples():
    assert an.p_worst(W(S=1)) == pytest.approx(1 - an.p_detect(W(S=1)))
    assert an.p_worst(W(p_gt=0.0, S=7)) == 1.0
    assert an.p_worst(W()) == pytest.approx((1 - 0.45 * 0.95**9) ** 4, rel=1e-12)


def test_worstcase_validation():
    with pytest.raises(an.AnalysisDomainError):
        W(p_gt=1.5)
    with pytest.raises(an.AnalysisDomainError):
        W(M=0)


@given(
    st.floats(0, 1), st.floats(0, 1), st.floats(0, 1),
    st.integers(1, 2000), st.integers(1, 50),
)
@settings(max_examples=200)
def test_p_worst_in_unit_interval(p_gt, p_mp, p_floor, M, S):
    v = an.p_worst(an.WorstCaseParams(p_gt, p_mp, p_floor, M, S))
    assert 0.0 <= v <= 1.0


@given(st.floats(0.01, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.integers(1, 200), st.integers(1, 20))
@settings(max_examples=200)
def test_p_worst_monotone_in_floor_and_s(p_gt, p_mp, f1, f2, M, S):
    lo, hi = sorted((f1, f2))
    a = an.p_worst(an.WorstCaseParams(p_gt, p_mp, lo, M, S))
    b = an.p_worst(an.WorstCaseParams(p_gt, p_mp, hi, M, S))
    assert b <= a + 1e-15
    c = an.p_worst(an.WorstCaseParams(p_gt, p_mp, hi, M, S + 1))
    assert c <= b + 1e-15


def _random_points(n, seed):
    rng = np.random.default_rng(seed)
    return [
        an.WorstCaseParams(
            float(rng.uniform(0.0, 1.0)), float(rng.uniform(0.0, 1.0)), float(rng.uniform(0.0, 1.0)),
            int(rng.integers(1, 100)), int(rng.integers(1, 20)),
        )
        for _ in range(n)
    ]


def test_derivative_matches_finite_difference():
    for w in _random_points(100, 0):
        num = an.dp_worst_numeric(w)
        assert abs(an.dp_worst(w) - num) <= 1e-5 * abs(num) + 1e-300


def test_reduced_and_expanded_derivative_agree():
    for w in _random_points(100, 1):
        assert an.dp_worst(w) == pytest.approx(an.dp_worst_expanded(w), rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("M, p_mp", [(1000, 0.001), (1000, 0.1), (10, 0.2), (4, 0.5)])
def test_derivative_zero_at_recommended_root(M, p_mp):
    (pt,) = [p for p in an.stationary_points(p_mp, M).points if p.kind == "recommended"]
    assert an.dp_worst(an.WorstCaseParams(pt.p_gt, p_mp, 0.8, M, 3)) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("M", [3, 10, 100])
def test_derivative_zero_at_degenerate_root(M):
    assert an.dp_worst(an.WorstCaseParams(1.0, 1.0, 0.7, M, 2)) == 0.0


def test_derivative_sign_structure():
    M, p_mp = 20, 0.2
    root = 1 / (M * p_mp)
    for p in np.linspace(0.01, 0.99, 50):
        d = an.dp_worst(an.WorstCaseParams(float(p), p_mp, 0.9, M, 3))
        if p < root - 1e-9:
            assert d < 0
        elif p > root + 1e-9:
            assert d > 0


def test_stationary_points_examples():
    assert an.stationary_points(0.001, 1000).recommended == 1.0
    assert an.stationary_points(0.1, 1000).recommended == 0.01
    assert an.stationary_points(0.5, 1).points == ()
    r = an.stationary_points(0.0, 10)
    assert r.points == () and r.note
    both = an.stationary_points(1.0, 4)
    assert [(p.p_gt, p.kind) for p in both.points] == [(1.0, "degenerate"), (0.25, "recommended")]


def test_worstcase_report_fields():
    rep = an.worstcase_report(0.001, 1000, p_gt=0.5)
    assert rep["recommended"] == 1.0 and rep["M"] == 1000
    assert rep["points"][0]["p_worst"] == pytest.approx(1 - 0.999**999)
    assert set(rep["at"]) == {"p_gt", "p_detect", "p_worst", "dp_worst"}


def test_monte_carlo_snr_ratios():
    cfg = SensorConfig(cycles=10_000, phi_sig=1.0, phi_bkg=0.0, pulse_fwhm=1e-9)
    depth = bin_to_depth(500, cfg)
    conv = an.peak_bin_snr(an.replicate_peak_counts(depth, cfg, BinGrid.full(cfg), 500))
    mem = an.peak_bin_snr(an.replicate_peak_counts(depth, cfg, BinGrid(469, 62, 62), 500))
    deep = an.peak_bin_snr(an.replicate_peak_counts(depth, cfg, BinGrid(375, 250, 1000), 500))
    assert mem / conv == pytest.approx(1.0, rel=0.05)
    assert deep / conv == pytest.approx(math.sqrt(0.25), rel=0.15)
    with pytest.raises(an.AnalysisDomainError):
        an.replicate_peak_counts(depth, cfg, BinGrid(0, 62, 62), 2)


def test_memory_snr_ratio_on_independent_draws():
    # frame 1 streams are independent of frame 0, so the ratio is statistical here
    cfg = SensorConfig(cycles=10_000, phi_sig=1.0, phi_bkg=0.0, pulse_fwhm=1e-9)
    depth = bin_to_depth(500, cfg)
    conv = an.peak_bin_snr(an.replicate_peak_counts(depth, cfg, BinGrid.full(cfg), 5000, frame=0))
    mem = an.peak_bin_snr(an.replicate_peak_counts(depth, cfg, BinGrid(469, 62, 62), 5000, frame=1))
    assert mem / conv == pytest.approx(1.0, rel=0.05)
