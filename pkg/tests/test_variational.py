import math

import numpy as np
import pytest

from busyldp.paths import area_p, evaluate, hitting_time
from busyldp.rates import make_context, pathcost_excursion
from busyldp.variational import (
    dump_solution,
    horizon_bound,
    property_checks,
    shoot,
    solve_Bpi,
    solve_direct,
    solve_shooting,
)

from refvalues import GAUSSIAN_B0, TWO_POINT_B0


@pytest.fixture(scope="module")
def gctx(gs):
    return make_context(gs)


@pytest.fixture(scope="module")
def tctx(tp):
    return make_context(tp)


def test_horizon_bound_examples(gctx):
    ybar, mu = gctx.ybar, gctx.mu
    assert horizon_bound(gctx, ybar).M == pytest.approx(ybar / abs(mu))
    assert math.isfinite(horizon_bound(gctx, 0.0).M)
    assert horizon_bound(gctx, 0.0).M >= math.sqrt(6)
    y1, y2 = 1.5 * ybar, 4.0 * ybar
    assert horizon_bound(gctx, y2).M / horizon_bound(gctx, y1).M == pytest.approx(y2 / y1)


def test_horizon_bound_is_affine_bounded(gctx):
    ys = np.linspace(0, 3 * gctx.ybar, 25)
    M = np.array([horizon_bound(gctx, y).M for y in ys])
    c, d = 1.0 / abs(gctx.mu), horizon_bound(gctx, 0.0).M
    assert np.all(M <= c * ys + d + 1e-9)


def test_direct_gaussian_closed_form(gctx):
    sol = solve_direct(gctx, 0.0, 400)
    assert sol.value == pytest.approx(GAUSSIAN_B0, rel=0.01)
    assert sol.horizon == pytest.approx(math.sqrt(6), rel=1e-3)
    assert "richardson" in sol.diagnostics


def test_direct_two_point_reference(tctx):
    assert solve_direct(tctx, 0.0, 400).value == pytest.approx(TWO_POINT_B0, rel=1e-5)


@pytest.mark.parametrize("fam", ["gctx", "tctx"])
def test_direct_vanishes_at_ybar(fam, request):
    ctx = request.getfixturevalue(fam)
    assert solve_direct(ctx, ctx.ybar, 100).value <= 1e-3
    assert solve_direct(ctx, 2 * ctx.ybar, 100).value <= 1e-3


@pytest.mark.parametrize("level", [0.5, 2.0, 8.0])
def test_level_scaling(gctx, tctx, level):
    # xi -> c xi(./c) multiplies the area by c^(1+p) and the cost and start by c
    for ctx in (gctx, tctx):
        c = level ** (1 / (1 + ctx.p))
        for y in (0.0, 0.3 * ctx.ybar):
            base = solve_direct(ctx, y, 200).value
            scaled = solve_direct(ctx, c * y, 200, level=level).value
            assert scaled == pytest.approx(c * base, rel=5e-3)


@pytest.mark.parametrize("fam", ["gctx", "tctx"])
def test_optimal_path_feasible_and_concave(fam, request):
    ctx = request.getfixturevalue(fam)
    for y in (0.0, 0.4 * ctx.ybar):
        sol = solve_direct(ctx, y, 200)
        path = sol.path
        slopes = np.array([s for _, s in path.segments])
        assert np.all(np.diff(slopes) <= 1e-12)
        assert slopes.min() >= ctx.mu - 1e-12
        assert path.start == y
        ts = np.linspace(0, path.horizon, 200)
        assert min(evaluate(path, t) for t in ts) >= -1e-9
        assert area_p(path, ctx.p) >= 1 - 1e-8
        assert sol.diagnostics["stationarity_residual"] <= 10 * sol.diagnostics["stationarity_step"]


def test_horizon_sufficiency(gctx):
    y = 0.3 * gctx.ybar
    sol = solve_direct(gctx, y, 200, formulation="constrained")
    capped = solve_direct(gctx, y, 200, formulation="constrained", T_cap=1.5 * sol.horizon)
    assert capped.value == pytest.approx(sol.value, rel=1e-3)


def test_direct_rejects_bad_arguments(gctx):
    with pytest.raises(ValueError):
        solve_direct(gctx, 0.0, 8)
    with pytest.raises(ValueError):
        solve_direct(gctx, -1.0, 100)


def test_shooting_gaussian_closed_form(gctx):
    sol = solve_shooting(gctx, 0.0)
    assert sol.z == pytest.approx(1.0, rel=1e-4)
    assert sol.horizon == pytest.approx(math.sqrt(6), rel=1e-4)
    assert sol.value == pytest.approx(GAUSSIAN_B0, rel=1e-5)


def test_shooting_straight_line_matches_pathcost(gctx):
    from busyldp.paths import BVPath

    y, z = 1.0, -0.5
    shot = shoot(gctx, y, z, 0.0)
    line = BVPath(shot.T, y, [(shot.T, z)])
    assert hitting_time(line) == pytest.approx(shot.T)
    assert shot.cost == pytest.approx(pathcost_excursion(gctx, line, y), rel=1e-12)
    assert shot.cost == pytest.approx(shot.T * gctx.conjugate(z), rel=1e-12)


def test_shooting_restricted_to_smooth_families(tctx):
    with pytest.raises(ValueError):
        solve_shooting(tctx, 0.0)


@pytest.mark.slow
@pytest.mark.parametrize("frac", [0.0, 0.25, 0.5])
def test_cross_solver_agreement(gctx, frac):
    y = frac * gctx.ybar
    d = solve_direct(gctx, y, 400).value
    s = solve_shooting(gctx, y).value
    assert abs(d - s) / d <= 0.01


def test_Bpi_bounds_and_refinement(gctx, tctx):
    for ctx in (gctx, tctx):
        B0 = solve_direct(ctx, 0.0, 100).value
        a = solve_Bpi(ctx, 8, m=100)
        b = solve_Bpi(ctx, 16, m=100)
        assert 0 <= a.value <= B0 + 1e-9 and 0 <= b.value <= B0 + 1e-9
        assert b.value <= a.value + ctx.beta * ctx.ybar / 8
        assert a.value <= a.upper_value


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="the grid offset biases the minimum down by about beta*ybar/k; "
                                       "2.7% at k = 64, see the acceptance suite")
def test_Bpi_matches_B0_at_k64(gctx):
    assert solve_Bpi(gctx, 64, m=200).value == pytest.approx(GAUSSIAN_B0, rel=0.02)


def test_property_checks_examples(gctx):
    rep = property_checks(gctx, [gctx.ybar, 2 * gctx.ybar], m=100)
    assert rep.ok and max(rep.values) <= 1e-3
    rep = property_checks(gctx, [0.0, gctx.ybar], m=100)
    assert rep.ok
    assert rep.values[0] - rep.values[1] <= gctx.ybar * gctx.conjugate(1.0) + 1e-3
    assert property_checks(gctx, [0.3], m=100).ok


@pytest.mark.parametrize("fam", ["gctx", "tctx"])
def test_property_checks_grid(fam, request):
    ctx = request.getfixturevalue(fam)
    rep = property_checks(ctx, list(np.linspace(0, 1.2 * ctx.ybar, 7)), m=100)
    assert rep.ok, rep.violations
    assert np.all(np.diff(rep.values) <= 1e-6)


def test_property_checks_flag_violations(gctx):
    rep = property_checks(gctx, [0.0, 0.5], values=[1.0, 1.2])
    assert not rep.ok


def test_dump_solution(gctx, tmp_path):
    sol = solve_direct(gctx, 0.0, 64)
    files = dump_solution(sol, tmp_path / "sol.csv")
    assert all(p.exists() for p in files)
    head = (tmp_path / "sol.csv").read_text().splitlines()[0]
    assert head.split(",")[:3] == ["s", "xi", "slope"]
