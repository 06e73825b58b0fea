import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from busyldp.config import ExperimentConfig
from busyldp.rates import make_context, rate_findim
from busyldp.verify import (
    InsufficientTail,
    binomial_band,
    estimate_Vbar_tail,
    estimate_W1_tail,
    fit_tail,
    local_slopes,
    verify_findim,
)

from refvalues import TWO_POINT_B0, TWO_POINT_LAMBDA

SMALL = ExperimentConfig(w1_cycles=200_000, vbar_replications=100_000, findim_replications=40_000,
                         findim_n=(50.0, 100.0, 200.0), oracle_K=600)


def test_fit_tail_recovers_exact_exponent():
    t = np.geomspace(1, 400, 12)
    N = 10**9
    counts = np.round(N * 0.8 * np.exp(-0.7 * np.sqrt(t)))
    est = fit_tail(t, counts, N, 0.5)
    assert est.slope == pytest.approx(0.7, rel=1e-3)
    assert est.intercept == pytest.approx(-math.log(0.8), abs=1e-2)
    assert est.r2 > 0.9999
    lo, hi = est.band()
    assert lo < est.slope < hi


def test_fit_tail_excludes_thin_levels():
    counts = np.array([5000, 2000, 700, 200, 29, 3])
    est = fit_tail(np.arange(1, 7), counts, 10**4, 1.0)
    assert est.used.tolist() == [True, True, True, True, False, False]
    with pytest.raises(InsufficientTail):
        fit_tail(np.arange(1, 7), [100, 50, 29, 10, 0, 0], 10**4, 1.0)


def test_local_slopes_and_band():
    t = np.array([1.0, 4.0, 9.0])
    np.testing.assert_allclose(local_slopes(t, np.exp(-2 * np.sqrt(t)), 0.5), [-2, -2])
    assert binomial_band([500], 1000, [0.5]).all()
    assert not binomial_band([600], 1000, [0.5]).any()


def test_W1_degenerate_model_refuses():
    cfg = SMALL.with_overrides(family="lattice-finite-support", params=(-1.0, 1.0))
    with pytest.raises(InsufficientTail):
        estimate_W1_tail(cfg, B0star=1.0)
    with pytest.raises(ValueError):
        estimate_W1_tail(SMALL, B0star=1.0, cycles=1000)


def test_W1_tail_against_oracle():
    rep = estimate_W1_tail(SMALL, B0star=TWO_POINT_B0)
    assert rep.in_band[rep.estimate.used].mean() >= 0.9
    s = rep.oracle_slopes
    assert np.all(np.diff(s) > 0)
    assert abs(s[-1] + TWO_POINT_B0) / TWO_POINT_B0 < 0.2
    again = estimate_W1_tail(SMALL, B0star=TWO_POINT_B0)
    np.testing.assert_array_equal(again.estimate.counts, rep.estimate.counts)
    assert again.estimate.slope == rep.estimate.slope


def test_W1_fit_gap_shrinks_for_larger_levels():
    cfg = SMALL.with_overrides(oracle=False)
    low = estimate_W1_tail(cfg, B0star=TWO_POINT_B0, levels=np.geomspace(2, 30, 8))
    high = estimate_W1_tail(cfg, B0star=TWO_POINT_B0, levels=np.geomspace(30, 400, 8))
    assert abs(high.estimate.slope - TWO_POINT_B0) < abs(low.estimate.slope - TWO_POINT_B0)


def test_fit_tail_prefactor_recovers_exact_terms():
    n = np.array([25.0, 50, 100, 200, 400])
    N = 10**15
    counts = np.round(N * np.exp(-0.3 - 0.44 * np.sqrt(n) - 0.5 * np.log(n)))
    plain = fit_tail(n, counts, N, 0.5)
    est = fit_tail(n, counts, N, 0.5, log_prefactor=True)
    assert est.slope == pytest.approx(0.44, abs=1e-6)
    assert est.prefactor == pytest.approx(0.5, abs=1e-5)
    assert abs(plain.slope - 0.44) > 0.01


def test_Vbar_refuses_unreachable_threshold():
    with pytest.raises(InsufficientTail):
        estimate_Vbar_tail(SMALL, [1000.0])
    with pytest.raises(ValueError):
        estimate_Vbar_tail(SMALL, [1.0], replications=1000)
    with pytest.raises(ValueError):
        estimate_Vbar_tail(SMALL, [1.0], bn_grid=[25, 50])


@pytest.mark.slow
def test_Vbar_slope_ratio_and_starts():
    zero = estimate_Vbar_tail(SMALL, [0.25, 1.0], "zero")
    warm = estimate_Vbar_tail(SMALL, [0.25, 1.0], "warmed")
    assert abs(zero.slope_ratios()[0] - 0.5) / 0.5 <= 0.25
    for a, b in zip(zero.with_prefactor(), warm.with_prefactor()):
        assert abs(a.slope - b.slope) <= 3.29 * math.hypot(a.slope_se, b.slope_se)


def test_findim_below_drift_is_free():
    rep = verify_findim(SMALL, [0.5, 1.0], [0.1, 0.1], B0star=TWO_POINT_B0, lam=TWO_POINT_LAMBDA)
    assert rep.predicted == 0.0
    assert np.all(rep.normalized < 0.05)


def test_findim_single_window_prediction():
    rep = verify_findim(SMALL, [1.0], [1.5], B0star=TWO_POINT_B0, lam=TWO_POINT_LAMBDA)
    assert rep.predicted == pytest.approx(TWO_POINT_B0 * (1.5 - TWO_POINT_LAMBDA) ** 0.5)
    with pytest.raises(ValueError):
        verify_findim(SMALL, [0.25, 0.5, 0.75, 1.0], [0.5] * 4, B0star=TWO_POINT_B0)


def test_findim_trend_two_point():
    rep = verify_findim(SMALL, B0star=TWO_POINT_B0)
    assert rep.lam == pytest.approx(TWO_POINT_LAMBDA, rel=1e-10)
    assert rep.trend_ok
    assert np.all(np.diff(rep.normalized) < 0)


@settings(max_examples=50, deadline=None)
@given(a=st.lists(st.floats(0.0, 3.0), min_size=1, max_size=3))
def test_findim_prediction_matches_rate(a):
    k = len(a)
    t = np.linspace(1 / k, 1, k)
    ctx = make_context(__import__("busyldp").two_point(0.3), 1.0, TWO_POINT_LAMBDA, TWO_POINT_B0)
    dt = np.diff(np.concatenate([[0], t]))
    expect = TWO_POINT_B0 * sum(max(x - TWO_POINT_LAMBDA * d, 0.0) ** 0.5 for x, d in zip(a, dt))
    got = rate_findim(ctx, t, np.cumsum(np.maximum(a, TWO_POINT_LAMBDA * dt)))
    assert got == pytest.approx(expect, rel=1e-12, abs=1e-15)
