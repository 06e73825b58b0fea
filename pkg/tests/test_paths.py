import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from busyldp.paths import (
    BVPath,
    MeshTooCoarse,
    ParametrizedGraph,
    PathError,
    StepDriftPath,
    area_p,
    discard_down_jumps,
    evaluate,
    format_path,
    hitting_time,
    m1p_distance,
    parse_path,
    reflect,
    step_graph,
    to_graph,
)


def test_evaluate_examples():
    assert evaluate(BVPath(1.0, 0.0, [(1.0, -0.4)]), 1.0) == pytest.approx(-0.4)
    jump = BVPath(1.0, 1.0, [(1.0, 0.0)], ups=[(0.5, 2.0)])
    assert evaluate(jump, 0.5) == 3.0
    assert evaluate(jump, 0.5, left=True) == 1.0
    assert evaluate(BVPath(2.0, 0.0, [(1.0, 2.0), (1.0, -1.0)]), 1.5) == pytest.approx(1.5)
    with pytest.raises(PathError):
        evaluate(jump, 1.5)


def test_path_invariants_enforced():
    with pytest.raises(PathError):
        BVPath(1.0, 0.0, [(0.5, 1.0)])
    with pytest.raises(PathError):
        BVPath(1.0, 0.0, [(1.0, 0.0)], ups=[(0.5, 1.0), (0.5, 2.0)])
    with pytest.raises(PathError):
        BVPath(1.0, 0.0, [(1.0, 0.0)], downs=[(0.5, -1.0)])
    p = BVPath(2.0, 0.0, [(1.0, 2.0), (1.0, -1.0)], ups=[(0.5, 1.0)], downs=[(1.5, 0.5)])
    assert p.total_variation == pytest.approx(2 + 1 + 1 + 0.5)


def test_reflect_examples():
    r = reflect(BVPath(1.0, 0.0, [(1.0, -1.0)]))
    assert all(evaluate(r, t) == 0.0 for t in np.linspace(0, 1, 11))
    pos = BVPath(2.0, 1.0, [(1.0, 0.5), (1.0, -0.5)])
    assert reflect(pos) == pos
    r = reflect(BVPath(2.0, 0.0, [(1.0, -1.0), (1.0, 1.0)]))
    assert r.segments == ((1.0, 0.0), (1.0, 1.0))


def test_hitting_time_examples():
    assert hitting_time(BVPath(3.0, 1.0, [(3.0, -0.5)])) == pytest.approx(2.0)
    assert hitting_time(BVPath(1.0, 0.0, [(1.0, -1.0)])) == 0.0
    assert hitting_time(BVPath(5.0, 1.0, [(5.0, 1.0)])) == math.inf


def test_area_examples():
    assert area_p(BVPath(1.0, 0.0, [(1.0, -1.0)]), 1.0) == 0.0
    tri = BVPath(2.0, 0.0, [(1.0, 1.0), (1.0, -1.0)])
    assert area_p(tri, 1.0, 2.0) == pytest.approx(1.0, rel=1e-12)
    assert area_p(tri, 2.0, 2.0) == pytest.approx(2 / 3, rel=1e-12)
    assert area_p(tri, 1.0, 1.0) == pytest.approx(0.5, rel=1e-12)


def test_discard_down_jumps_examples():
    p = BVPath(1.0, 0.0, [(1.0, 0.5)], ups=[(0.2, 1.0)])
    assert discard_down_jumps(p) == p
    q = BVPath(1.0, 0.0, [(1.0, 0.5)], downs=[(0.4, 1.0)])
    d = discard_down_jumps(q)
    assert d.downs == () and d.segments == q.segments


def test_path_literal_round_trip():
    p = BVPath(2.0, 0.25, [(0.5, 1.0), (1.5, -0.3)], ups=[(0.1, 0.7)], downs=[(1.9, 0.1)])
    assert parse_path(format_path(p)) == p
    with pytest.raises(PathError):
        parse_path("bvpath 1 0\nwobble 1 2\n")


def _step(t0, mesh):
    return step_graph([t0], [1.0], mesh=mesh)


def test_m1_identical_and_shifted_jumps():
    mesh = 1e-3
    a = _step(0.5, mesh)
    assert float(m1p_distance(a, a)) <= 2 * mesh
    d = m1p_distance(a, _step(0.55, mesh))
    assert float(d) <= 0.05 + 2 * mesh
    assert d.error_bound > 0


def test_m1_jump_against_steep_ramp():
    jump = BVPath(1.0, 0.0, [(1.0, 0.0)], ups=[(0.5, 1.0)])
    dists = []
    for w in (0.1, 0.03, 0.01):
        ramp = BVPath(1.0, 0.0, [(0.5, 0.0), (w, 1.0 / w), (0.5 - w, 0.0)])
        dists.append(float(m1p_distance(to_graph(jump, 1e-3), to_graph(ramp, 1e-3))))
    assert dists[0] > dists[1] > dists[2]
    assert dists[2] <= 0.01 + 2e-3


def test_m1_mesh_too_coarse():
    g = ParametrizedGraph(np.array([0.0, 1.0]), np.array([0.0, 1.0]), 1e-3)
    with pytest.raises(MeshTooCoarse):
        m1p_distance(g, g)


def test_m1_constant_shift_bound():
    mesh = 1e-3
    base = BVPath(1.0, 0.0, [(0.3, 1.0), (0.7, -0.2)], ups=[(0.6, 0.4)])
    for c in (0.05, 0.2):
        shifted = BVPath(1.0, c, base.segments, ups=base.ups)
        d = float(m1p_distance(to_graph(base, mesh), to_graph(shifted, mesh)))
        assert d <= c + 2 * mesh


def test_step_drift_path():
    z = StepDriftPath(0.5, [(0.5, 2.0)])
    assert z(0.25) == pytest.approx(0.125)
    assert z(0.5) == pytest.approx(2.25)
    with pytest.raises(PathError):
        StepDriftPath(-1.0)
    with pytest.raises(PathError):
        StepDriftPath(0.0, [(0.5, 1.0), (0.5, 2.0)])


# -- random paths -----------------------------------------------------------

@st.composite
def bv_paths(draw, max_segments=5, max_jumps=3):
    k = draw(st.integers(1, max_segments))
    durs = draw(st.lists(st.floats(0.05, 1.0), min_size=k, max_size=k))
    slopes = draw(st.lists(st.floats(-2.0, 2.0), min_size=k, max_size=k))
    T = math.fsum(durs)
    start = draw(st.floats(0.0, 1.5))

    def jumps():
        n = draw(st.integers(0, max_jumps))
        times = draw(st.lists(st.floats(0.0, T), min_size=n, max_size=n, unique=True))
        sizes = draw(st.lists(st.floats(0.05, 1.5), min_size=n, max_size=n))
        return list(zip(times, sizes))

    return BVPath(T, start, list(zip(durs, slopes)), ups=jumps(), downs=jumps())


def _grid_values(path, n=400):
    ts = np.linspace(0.0, path.horizon, n)
    return np.array([evaluate(path, t) for t in ts])


@settings(max_examples=80, deadline=None)
@given(bv_paths())
def test_reflection_properties(path):
    r = reflect(path)
    vals = _grid_values(r)
    assert np.all(vals >= -1e-12)
    assert reflect(r) == r


@settings(max_examples=80, deadline=None)
@given(bv_paths())
def test_discarding_down_jumps_raises_area(path):
    for p in (1.0, 2.0, 0.5):
        assert area_p(reflect(discard_down_jumps(path)), p) >= area_p(reflect(path), p) - 1e-12


@settings(max_examples=50, deadline=None)
@given(bv_paths(), st.lists(st.floats(0.05, 1.0), min_size=1, max_size=3))
def test_reflection_monotone_under_added_increase(path, sizes):
    T = path.horizon
    ups = [(T * (i + 1) / (len(sizes) + 1), s) for i, s in enumerate(sizes)]
    times = {t for t, _ in path.ups}
    if any(t in times for t, _ in ups):
        return
    bigger = BVPath(T, path.start, [(d, s + 0.1) for d, s in path.segments], ups=path.ups + tuple(ups),
                    downs=path.downs)
    a, b = _grid_values(reflect(path)), _grid_values(reflect(bigger))
    assert np.all(b >= a - 1e-9)


@settings(max_examples=30, deadline=None)
@given(bv_paths(max_jumps=0))
def test_area_matches_riemann_sum(path):
    r = reflect(path)
    n = int(path.horizon / 1e-4)
    ts = (np.arange(n) + 0.5) * (path.horizon / n)
    knots = np.cumsum([0.0] + [d for d, _ in r.segments])
    vals = np.interp(ts, knots, [evaluate(r, min(t, r.horizon)) for t in knots])
    for p in (1.0, 2.0):
        assert area_p(r, p) == pytest.approx(np.sum(vals**p) * path.horizon / n, abs=1e-6, rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(bv_paths())
def test_graph_mesh_invariant(path):
    mesh = 5e-3
    g = to_graph(path, mesh)
    assert g.max_step() <= mesh * (1 + 1e-9)
    assert np.all(np.diff(g.t) >= 0)
