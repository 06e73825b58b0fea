"""Euler-Lagrange shooting for the optimal excursion.

Along an optimal concave path the tilt theta(s) = grad Lambda*(slope)
decreases as c - ell p A(s) with A(s) the running integral of xi^(p-1).
Given the initial slope z (so c = grad Lambda*(z)) and the multiplier ell,
the path is obtained by integrating (xi, A, area, cost) until xi returns to 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, minimize_scalar

from ..models import grad_log_mgf, log_mgf
from ..paths import BVPath
from ..rates import RateContext
from .common import NonReturn, VariationalSolution, horizon_bound

__all__ = ["ShotResult", "shoot", "solve_shooting"]

_SMOOTH = ("gaussian", "exp-minus-constant")


@dataclass
class ShotResult:
    z: float
    ell: float
    T: float
    area: float
    cost: float
    clamped: bool
    sol: object = None

    def path(self, y: float, mu: float, points: int = 400) -> BVPath:
        if self.sol is None:
            return BVPath(self.T, y, [(self.T, self.z)])
        s = np.linspace(0.0, self.T, points + 1)
        xi = self.sol.sol(s)[0]
        xi[0], xi[-1] = y, 0.0
        slopes = np.maximum(np.diff(xi) / np.diff(s), mu)
        return BVPath(self.T, y, list(zip(np.diff(s).tolist(), slopes.tolist())))


def _shot(ctx: RateContext, y: float, z: float, ell: float, s_max: float, dense=False, rtol=1e-10):
    model = ctx.model
    p = ctx.p
    conj = ctx.conjugate
    if ell == 0.0:
        # straight line: exact
        if z >= 0:
            return None
        T = y / (-z)
        return ShotResult(z, 0.0, T, y ** (p + 1) / ((p + 1) * (-z)), T * float(conj(z)), False)
    c = float(conj.grad(z))
    clamped = [False]

    def rhs(s, u):
        xi, A = u[0], u[1]
        # intermediate Runge-Kutta stages may carry A < 0; the tilt never exceeds c
        th = min(c - ell * p * A, c)
        if th <= 0.0:
            th = 0.0
            clamped[0] = True
        slope = float(grad_log_mgf(model, th))
        xp = xi if xi > 0 else 0.0
        dA = xp ** (p - 1.0) if xp > 0 else 0.0
        run = th * slope - float(log_mgf(model, th))
        return [slope, dA, xp**p, max(run, 0.0)]

    def hit(s, u):
        return u[0]

    hit.terminal = True
    hit.direction = -1.0
    s0 = 0.0
    u0 = [y, 0.0, 0.0, 0.0]
    if y == 0.0:
        if z <= 0:
            return ShotResult(z, ell, 0.0, 0.0, 0.0, False)
        # step off the singular start along the initial line
        s0 = 1e-9 / max(z, 1e-12)
        x0 = z * s0
        u0 = [x0, z ** (p - 1.0) * s0**p / p, x0 ** (p + 1) / ((p + 1) * z), s0 * float(conj(z))]
    sol = solve_ivp(rhs, (s0, s_max), u0, method="DOP853", events=hit, rtol=rtol, atol=1e-13,
                    dense_output=dense)
    if sol.status != 1 or len(sol.t_events[0]) == 0:
        return None
    T = float(sol.t_events[0][0])
    uT = sol.y_events[0][0]
    return ShotResult(z, ell, T, float(uT[2]), float(uT[3]), clamped[0], sol if dense else None)


def shoot(ctx: RateContext, y: float, z: float, ell: float, s_max: float | None = None) -> ShotResult:
    """Integrate the first-order conditions from xi(0) = y with initial slope z.

    Raises NonReturn when the path has not come back to 0 by ``s_max``.
    """
    if s_max is None:
        s_max = 50.0 * horizon_bound(ctx, y).M
    res = _shot(ctx, y, z, ell, s_max, dense=True)
    if res is None:
        raise NonReturn(f"path from y={y} with z={z}, ell={ell} does not return by {s_max}")
    return res


def _slope_cap(ctx):
    top = ctx.model.support_range()[1]
    if math.isfinite(top):
        return top - 1e-9 * max(1.0, abs(top))
    return abs(ctx.mu) * 20.0 + 10.0


def _scan_then_brent(f, lo, hi, points=25):
    zs = np.linspace(lo, hi, points)
    vals = np.array([f(z) for z in zs])
    k = int(np.argmin(vals))
    a = zs[max(k - 1, 0)]
    b = zs[min(k + 1, points - 1)]
    res = minimize_scalar(f, bounds=(a, b), method="bounded", options={"xatol": 1e-10, "maxiter": 200})
    if res.fun <= vals[k]:
        return float(res.x), float(res.fun)
    return float(zs[k]), float(vals[k])


def solve_shooting(ctx: RateContext, y: float, *, level: float = 1.0, allow_nonsmooth: bool = False,
                   rtol: float = 1e-10) -> VariationalSolution:
    """Minimal excursion cost from y via the Euler-Lagrange dynamics.

    At y = 0 the multiplier is a pure scale parameter, so ell = 1 is fixed
    and the scale-free ratio cost / area^alpha is minimized over z alone.
    For y > 0 the multiplier is solved from area = level for every z and the
    cost is minimized over z.
    """
    fam = ctx.model.family
    if fam not in _SMOOTH and not allow_nonsmooth:
        raise ValueError(f"shooting is restricted to smooth families, got {fam!r}")
    mu = ctx.mu
    p = ctx.p
    alpha = ctx.alpha
    bound = horizon_bound(ctx, y * level ** (-alpha))
    M = bound.M * level**alpha
    z_hi = _slope_cap(ctx)
    shots = [0]
    descent_area = y ** (p + 1) / ((p + 1) * abs(mu))
    if descent_area >= level * (1 - 1e-12):
        T = y / abs(mu)
        diag = {"shots": 0, "constraint_residual": 0.0, "area": descent_area, "clamped": False}
        return VariationalSolution(float(y), 0.0, "shooting", T, BVPath(T, y, [(T, mu)]), z=mu, ell=0.0,
                                   level=float(level), diagnostics=diag)

    if y == 0.0:
        s_max = 1e6

        def ratio(z):
            shots[0] += 1
            r = _shot(ctx, 0.0, z, 1.0, s_max, rtol=rtol)
            if r is None or r.area <= 0:
                return math.inf
            return r.cost / r.area**alpha

        z_lo = 1e-3 * min(abs(mu), z_hi)
        z_star, rmin = _scan_then_brent(ratio, z_lo, min(z_hi, 6.0 * abs(mu) + 1.0))
        base = _shot(ctx, 0.0, z_star, 1.0, s_max, dense=True, rtol=rtol)
        # rescale xi_c(t) = c xi(t / c) to meet the area level
        c = (level / base.area) ** (1.0 / (1.0 + p))
        ell = 1.0 / c**p
        best = _shot(ctx, 0.0, z_star, ell, s_max * c, dense=True, rtol=rtol)
        value = rmin * level**alpha
    else:
        s_max = 4.0 * M + 10.0

        def area_gap(z, log_ell):
            r = _shot(ctx, y, z, math.exp(log_ell), s_max, rtol=rtol)
            shots[0] += 1
            if r is None:
                return math.inf, None
            return r.area - level, r

        last = [0.0]

        def solve_ell(z):
            # bracket log(ell) around the previous root; area falls as ell grows
            lo, hi = last[0] - 0.25, last[0] + 0.25
            g_lo = area_gap(z, lo)[0]
            while g_lo <= 0 and lo > -60:
                lo -= 2.0
                g_lo = area_gap(z, lo)[0]
            g_hi = area_gap(z, hi)[0]
            while g_hi > 0 and hi < 60:
                hi += 2.0
                g_hi = area_gap(z, hi)[0]
            if not (g_lo > 0 >= g_hi):
                return None
            le = brentq(lambda t: min(area_gap(z, t)[0], 1e300), lo, hi, xtol=1e-12, rtol=1e-12)
            last[0] = le
            return math.exp(le)

        def cost_of(z):
            if z < 0 and y ** (p + 1) / ((p + 1) * (-z)) < level:
                return math.inf
            ell = solve_ell(z)
            if ell is None:
                return math.inf
            r = _shot(ctx, y, z, ell, s_max, rtol=rtol)
            return math.inf if r is None else r.cost

        z_min = -(y ** (p + 1)) / ((p + 1) * level)
        z_lo = max(mu, z_min) + 1e-9
        z_star, value = _scan_then_brent(cost_of, z_lo, min(z_hi, 4.0 * abs(mu) + 1.0))
        ell = solve_ell(z_star)
        best = _shot(ctx, y, z_star, ell, s_max, dense=True, rtol=rtol)
    path = best.path(y, mu)
    diag = {
        "shots": shots[0],
        "constraint_residual": abs(best.area - level) / level,
        "area": best.area,
        "clamped": best.clamped,
        "stationarity_residual": 0.0,
        "M": M,
    }
    return VariationalSolution(float(y), float(value), "shooting", best.T, path, z=z_star, ell=ell,
                               level=float(level), diagnostics=diag)
