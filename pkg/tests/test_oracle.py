import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from busyldp.models import lattice, tilt_root_beta, two_point
from busyldp.oracle import (
    AreaUnits,
    LatticeChain,
    choose_cap,
    duality_check,
    exact_cycle_law,
    last_cycle_bounds_check,
    reversed_kernel,
    stationary,
    stationary_tail_slope,
    write_stationary_csv,
    write_tail_csv,
)
from busyldp.verify import local_slopes

from refvalues import TWO_POINT_B0, TWO_POINT_LAMBDA, TWO_POINT_PI0


@pytest.fixture(scope="module")
def chain(tp):
    return LatticeChain.from_model(tp, 400)


@pytest.fixture(scope="module")
def skew():
    # increments -2 w.p. 0.6, +1 w.p. 0.4: not skip-free downwards
    return LatticeChain((-2, 1), (0.6, 0.4), 300)


def test_chain_validation():
    with pytest.raises(ValueError):
        LatticeChain((-1, 1), (0.5, 0.6), 10)
    with pytest.raises(ValueError):
        LatticeChain((-1, 1), (0.4, 0.6), 10)
    with pytest.raises(ValueError):
        LatticeChain((-0.5, 1), (0.9, 0.1), 10)
    assert choose_cap(two_point(0.3)) == LatticeChain.from_model(two_point(0.3)).K


def test_stationary_examples(chain, tp):
    law = stationary(LatticeChain((-1,), (1.0,), 5))
    np.testing.assert_allclose(law.pi, [1, 0, 0, 0, 0, 0], atol=1e-15)
    law = stationary(chain)
    assert law.pi.sum() == pytest.approx(1.0, abs=1e-14)
    assert law.residual <= 1e-12
    assert law.pi[0] == pytest.approx(TWO_POINT_PI0, rel=1e-12)
    assert law.mean == pytest.approx(TWO_POINT_LAMBDA, rel=1e-12)
    ratio = law.pi[2:40] / law.pi[1:39]
    np.testing.assert_allclose(ratio, 3 / 7, rtol=1e-10)
    assert stationary_tail_slope(law.pi, 1, 60) == pytest.approx(-tilt_root_beta(tp), rel=5e-3)


def test_stationary_tail_slope_not_skip_free(skew):
    model = lattice([-2, 1], [0.6, 0.4])
    law = stationary(skew)
    assert stationary_tail_slope(law.pi, 10, 120) == pytest.approx(-tilt_root_beta(model), rel=5e-3)


def test_reversed_kernel_is_stochastic(chain, skew):
    for c in (chain, skew):
        pi = stationary(c).pi
        R = reversed_kernel(c, pi)
        reach = pi > 0
        np.testing.assert_allclose(R[reach].sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(pi @ R, pi, atol=1e-13)


def test_duality_examples(chain, skew):
    for c in (chain, skew):
        assert duality_check(c, 1, 0.5).gap <= 1e-14
    res = duality_check(chain, 12, 3.0)
    assert res.mode == "exhaustive" and res.gap <= 1e-12 and res.lhs > 0
    wrong = duality_check(chain, 12, 3.0, pi0=0.5)
    assert wrong.gap > 1e-4


@pytest.mark.parametrize("n,b,p", [(6, 2.0, 1.0), (10, 4.0, 1.0), (8, 3.0, 2.0), (8, 3.0, 0.5)])
def test_duality_dp_matches_exhaustive(chain, skew, n, b, p):
    if not float(p).is_integer():
        # fine area bins: keep the state space small
        chain, skew = LatticeChain(chain.values, chain.probs, 60), LatticeChain(skew.values, skew.probs, 60)
    for c in (chain, skew):
        ex = duality_check(c, n, b, p, mode="exhaustive")
        dp = duality_check(c, n, b, p, mode="dp")
        assert ex.gap <= 1e-12
        assert abs(ex.lhs - dp.lhs) <= 1e-13 and abs(ex.rhs - dp.rhs) <= 1e-13


def test_duality_dp_long_horizon(chain):
    assert duality_check(chain, 100, 20.0, mode="dp").gap <= 1e-10
    with pytest.raises(ValueError):
        duality_check(chain, 15, 1.0, mode="exhaustive")


def test_last_cycle_examples(chain):
    r = last_cycle_bounds_check(chain, 50, 0.0)
    assert r.upper_holds and r.lower_holds
    r = last_cycle_bounds_check(chain, 50, 10.0)
    assert r.in_regime and r.upper_holds and r.lower_holds and r.lower_strict_holds
    assert r.upper > r.target > r.lower
    r = last_cycle_bounds_check(chain, 3, 10.0)
    assert not r.in_regime and r.lower_strict_holds


def test_last_cycle_non_integer_power(skew):
    r = last_cycle_bounds_check(LatticeChain(skew.values, skew.probs, 60), 40, 6.0, p=1.5)
    assert r.upper_holds and r.lower_strict_holds


def test_cycle_law_examples(chain):
    law = exact_cycle_law(LatticeChain((-1,), (1.0,), 5), 1.0, levels=[0.0, 1.0])
    assert law.tau_pmf[1] == pytest.approx(1.0) and law.mean_tau == pytest.approx(1.0)
    np.testing.assert_allclose(law.tail, [1.0, 0.0])
    law = exact_cycle_law(chain, 1.0, levels=[1.0, 5.0, 20.0])
    assert law.mean_tau * TWO_POINT_PI0 == pytest.approx(1.0, abs=1e-10)
    assert law.tau_pmf[1] == pytest.approx(0.7)
    assert law.tail[0] == pytest.approx(0.3)
    assert law.tau_truncation <= 1e-15


def test_cycle_law_kac_skew(skew):
    law = exact_cycle_law(skew, 1.0)
    assert law.mean_tau * stationary(skew).pi[0] == pytest.approx(1.0, abs=1e-10)


def test_cycle_law_small_areas_by_hand(chain):
    # W_1 >= 2 needs the walk to go up and come back later: the first step +1 then
    # not -1 immediately; P(W >= 2) = 0.3 * (1 - 0.7) = 0.09
    law = exact_cycle_law(chain, 1.0, levels=[2.0, 3.0])
    assert law.tail[0] == pytest.approx(0.09)
    # W >= 3 after +1,+1 (area 3 already) = 0.09; other routes need more steps
    assert law.tail[1] == pytest.approx(0.09)


def test_cycle_tail_slope_trend(chain):
    levels = np.geomspace(1e3, 1e5, 9)
    law = exact_cycle_law(LatticeChain.from_model(two_point(0.3), 2000), 1.0, levels=levels)
    s = local_slopes(levels, law.tail, 0.5)
    assert np.all(np.diff(s) > 0)
    assert np.all(s < -TWO_POINT_B0)
    assert abs(s[-1] + TWO_POINT_B0) < 0.02


def test_area_units():
    u = AreaUnits.for_range(1.0, 100.0)
    assert u.mode == "exact" and u.level(3.0) == 3
    np.testing.assert_array_equal(u.increments(3), [0, 1, 2, 3])
    inner = AreaUnits.for_range(0.5, 1000.0, "inner")
    outer = AreaUnits.for_range(0.5, 1000.0, "outer")
    assert np.all(inner.increments(50) <= outer.increments(50))


def test_dumps(chain, tmp_path):
    law = stationary(chain)
    p = write_stationary_csv(law.pi, tmp_path / "pi.csv")
    assert p.read_text().splitlines()[0] == "x,pi"
    p = write_tail_csv([1.0, 2.0], [0.3, 0.09], tmp_path / "tail.csv")
    assert len(p.read_text().splitlines()) == 3


@settings(max_examples=25, deadline=None)
@given(q=st.floats(0.05, 0.45), n=st.integers(1, 9), b=st.floats(0.5, 8.0))
def test_duality_property(q, n, b):
    c = LatticeChain.from_model(two_point(q), 120)
    assert duality_check(c, n, b).gap <= 1e-12


@settings(max_examples=15, deadline=None)
@given(q=st.floats(0.05, 0.45))
def test_kac_property(q):
    c = LatticeChain.from_model(two_point(q))
    law = exact_cycle_law(c, 1.0)
    assert law.mean_tau * stationary(c).pi[0] == pytest.approx(1.0, abs=1e-9)
    assert stationary(c).pi[0] == pytest.approx((1 - 2 * q) / (1 - q), rel=1e-9)
