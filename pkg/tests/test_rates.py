import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from busyldp.paths import BVPath, StepDriftPath
from busyldp.rates import (
    InsufficientCycles,
    TruncationUnreached,
    estimate_lambda,
    make_context,
    pathcost_bv,
    pathcost_excursion,
    rate_Ialpha,
    rate_IK,
    rate_IS,
    rate_IY,
    rate_IZ,
    rate_findim,
)
from busyldp.sim import CycleRecord, harvest_cycles

LAM = 0.75
B0 = 0.5


@pytest.fixture
def ctx(tp):
    return make_context(tp, 1.0, LAM, B0)


def test_context_alpha(tp):
    assert make_context(tp, 3.0).alpha == 0.25
    with pytest.raises(ValueError):
        make_context(tp, 1.0, lam=-1.0)


def test_pathcost_bv_examples(gs, tp):
    c = make_context(gs)
    assert pathcost_bv(c, BVPath(1.0, 0.0, [(1.0, -1.0)])) == pytest.approx(0.0, abs=1e-15)
    assert pathcost_bv(c, BVPath(2.0, 0.0, [(2.0, 0.0)])) == pytest.approx(1.0)
    assert pathcost_bv(c, BVPath(1.0, 0.0, [(1.0, 0.0)], ups=[(0.5, 0.1)])) == math.inf
    # two-point: finite theta_+ is infinite too, but slope 1 has finite cost
    assert pathcost_bv(make_context(tp), BVPath(1.0, 0.0, [(1.0, 1.0)])) == pytest.approx(-math.log(0.3))
    assert pathcost_bv(make_context(tp), BVPath(1.0, 0.0, [(1.0, 1.5)])) == math.inf


def test_pathcost_excursion_examples(gs, tp):
    c = make_context(gs)
    ybar = c.ybar
    descent = BVPath(ybar / abs(c.mu), ybar, [(ybar / abs(c.mu), c.mu)])
    assert pathcost_excursion(c, descent, ybar) == pytest.approx(0.0, abs=1e-15)
    tri = BVPath(2.0, 0.0, [(1.0, 1.0), (1.0, -1.0)])
    assert pathcost_excursion(c, tri, 0.0) == pytest.approx(2.0)
    assert pathcost_excursion(c, tri, 0.5) == math.inf
    with pytest.raises(TruncationUnreached):
        pathcost_excursion(c, BVPath(1.0, 1.0, [(1.0, 1.0)]), 1.0)


@pytest.mark.parametrize("scale", [1.0, 1.5, 4.0])
def test_zero_cost_descent_beyond_ybar(tp, gs, scale):
    for model in (tp, gs):
        c = make_context(model)
        y = scale * c.ybar
        T = y / abs(c.mu)
        assert pathcost_excursion(c, BVPath(T, y, [(T, c.mu)]), y) == 0.0


def test_rate_IY_examples(ctx):
    assert rate_IY(ctx, StepDriftPath(LAM)) == 0.0
    assert rate_IY(ctx, StepDriftPath(LAM, [(0.3, 4.0)])) == pytest.approx(2 * B0)
    assert rate_IY(ctx, StepDriftPath(LAM / 2)) == math.inf
    assert rate_IZ is rate_IY
    assert rate_Ialpha(ctx, StepDriftPath(LAM, [(0.3, 4.0)])) == pytest.approx(2.0)


def test_rate_IS_examples(ctx):
    assert rate_IS(ctx, StepDriftPath(0.0)) == 0.0
    assert rate_IS(ctx, StepDriftPath(0.0, [(1.0, 9.0)])) == pytest.approx(3 * B0)
    assert rate_IS(ctx, StepDriftPath(0.0, [(0.5, 9.0)])) == math.inf
    # restricted to one jump at 1 with no drift, I_S and I_Y agree once lambda = 0
    zeta = StepDriftPath(0.0, [(1.0, 9.0)])
    assert rate_IS(ctx, zeta) == rate_IY(ctx.with_values(lam=0.0), zeta)


def test_rate_findim_examples(ctx):
    assert rate_findim(ctx, [0.5, 1.0], [LAM * 0.5, LAM]) == 0.0
    assert rate_findim(ctx, [1.0], [LAM + 4.0]) == pytest.approx(2 * B0)
    assert rate_findim(ctx, [0.5, 1.0], [0.5, 0.6]) == math.inf
    with pytest.raises(ValueError):
        rate_findim(ctx, [0.5, 0.4], [1.0, 2.0])


def test_rate_IK_examples(tp):
    c = make_context(tp)
    assert rate_IK(c, BVPath(1.0, 0.0, [(1.0, 0.0)])) == pytest.approx(c.conjugate(0.0))
    assert rate_IK(c, BVPath(1.0, 0.0, [(1.0, c.mu)])) == pytest.approx(0.0, abs=1e-15)
    assert rate_IK(c, BVPath(1.0, 1.0, [(1.0, 0.0)])) == math.inf


def test_estimate_lambda_examples(tp):
    assert estimate_lambda([CycleRecord(1, 0.0, 0.0)] * 5) == (0.0, 0.0)
    lam, se = estimate_lambda([CycleRecord(2, 1.0, 1.0)] * 5)
    assert lam == 0.5 and se == 0.0
    with pytest.raises(InsufficientCycles):
        estimate_lambda([CycleRecord(2, 1.0, 1.0)])


def test_estimate_lambda_self_consistent(tp):
    small = estimate_lambda(harvest_cycles(tp, 10**5, 1.0, ("lam", 0)))
    large = estimate_lambda(harvest_cycles(tp, 10**6, 1.0, ("lam", 1)))
    assert abs(small[0] - large[0]) <= 3 * math.hypot(small[1], large[1])
    assert abs(large[0] - LAM) <= 4 * large[1]


@settings(max_examples=100, deadline=None)
@given(u=st.floats(0.0, 1.0), b=st.floats(0.01, 50.0), p=st.sampled_from([0.5, 1.0, 2.0]))
def test_findim_single_window_equals_single_jump(tp, u, b, p):
    c = make_context(tp, p, LAM, B0)
    assert rate_findim(c, [1.0], [LAM + b]) == pytest.approx(rate_IY(c, StepDriftPath(LAM, [(u, b)])), rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(b1=st.floats(0.01, 10.0), b2=st.floats(0.01, 10.0), p=st.floats(0.2, 4.0))
def test_merged_jump_is_cheaper(tp, b1, b2, p):
    c = make_context(tp, p, LAM, B0)
    merged = rate_IY(c, StepDriftPath(LAM, [(0.5, b1 + b2)]))
    split = rate_IY(c, StepDriftPath(LAM, [(0.2, b1), (0.7, b2)]))
    assert merged <= split * (1 + 1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0.0, 1.0), st.floats(0.01, 2.0)), min_size=1, max_size=4,
                unique_by=lambda x: x[0]),
       st.randoms(use_true_random=False))
def test_pathcost_ignores_jump_times(tp, jumps, rnd):
    from busyldp.models import exp_minus_constant

    c = make_context(exp_minus_constant(1.0, 2.0))
    a = BVPath(1.0, 0.0, [(1.0, -0.5)], ups=jumps)
    sizes = [b for _, b in jumps]
    rnd.shuffle(sizes)
    times = [(i + 1) / (len(sizes) + 1) for i in range(len(sizes))]
    b = BVPath(1.0, 0.0, [(1.0, -0.5)], ups=list(zip(times, sizes)))
    assert pathcost_bv(c, a) == pytest.approx(pathcost_bv(c, b), rel=1e-13)
