"""Direct minimization over concave piecewise-linear paths.

The path on [0, T] is described by m nonincreasing slopes bounded below by
mu.  The cone projection is isotonic regression followed by clipping, the
inner solver is spectral projected gradient with a nonmonotone line search,
and the area constraint is handled by an augmented Lagrangian.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.optimize import isotonic_regression

from ..paths import BVPath
from ..rates import RateContext
from .common import ConjugateTable, InfeasibleGrid, VariationalSolution, horizon_bound

__all__ = ["solve_direct", "DirectSettings"]

_GOLD = 0.5 * (math.sqrt(5.0) - 1.0)


@dataclass(frozen=True)
class DirectSettings:
    max_inner: int = 4000
    max_outer: int = 40
    inner_tol: float = 1e-11
    feas_tol: float = 1e-10
    coarse_points: int = 9
    golden_iters: int = 22
    t_rel_tol: float = 2e-4


# -- area of the positive part of a piecewise-linear path -----------------

def _area_and_grad(x: np.ndarray, delta: float, p: float):
    """Area of max(x, 0)^p along the polyline with knot values x and spacing delta.

    Returns the area and its gradient with respect to every knot value.
    """
    a = x[:-1]
    b = x[1:]
    ap = np.maximum(a, 0.0)
    bp = np.maximum(b, 0.0)
    q = p + 1.0
    Fa = ap**q / q
    Fb = bp**q / q
    ga = ap**p
    gb = bp**p
    diff = b - a
    scale = np.maximum(np.abs(a), np.abs(b))
    near = np.abs(diff) <= 1e-3 * scale
    safe = np.where(near, 1.0, diff)
    h = delta * (Fb - Fa) / safe
    dhb = delta * (gb * diff - (Fb - Fa)) / safe**2
    dha = delta * ((Fb - Fa) - ga * diff) / safe**2
    if np.any(near):
        # series about the midpoint; both ends share a sign here
        m = 0.5 * (a[near] + b[near])
        hh = 0.5 * diff[near]
        mp = np.maximum(m, 0.0)
        pos = m > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            g0 = np.where(pos, mp**p, 0.0)
            g1 = np.where(pos, p * mp ** (p - 1), 0.0)
            g2 = np.where(pos, p * (p - 1) * mp ** (p - 2), 0.0)
            g3 = np.where(pos, p * (p - 1) * (p - 2) * mp ** (p - 3), 0.0)
            g4 = np.where(pos, p * (p - 1) * (p - 2) * (p - 3) * mp ** (p - 4), 0.0)
        h2 = hh * hh
        h[near] = delta * (g0 + g2 * h2 / 6.0 + g4 * h2 * h2 / 120.0)
        dm = delta * (g1 + g3 * h2 / 6.0)
        dh = delta * (g2 * hh / 3.0 + g4 * h2 * hh / 30.0)
        dhb[near] = 0.5 * (dm + dh)
        dha[near] = 0.5 * (dm - dh)
    gx = np.zeros_like(x)
    gx[1:] += dhb
    gx[:-1] += dha
    return float(h.sum()), gx


class _Profile:
    """Cost and area of a slope profile on a uniform grid over [0, T]."""

    def __init__(self, table: ConjugateTable, p: float, y: float, lo: float, hi: float):
        self.table = table
        self.p = p
        self.y = y
        self.lo = lo
        self.hi = hi

    def project(self, v):
        w = isotonic_regression(v, increasing=False).x
        return np.clip(w, self.lo, self.hi)

    def knots(self, v, T):
        delta = T / len(v)
        return np.concatenate([[self.y], self.y + delta * np.cumsum(v)])

    def cost(self, v, T):
        delta = T / len(v)
        return delta * float(np.sum(self.table.value(v))), delta * self.table.grad(v)

    def area(self, v, T):
        delta = T / len(v)
        x = self.knots(v, T)
        phi, gx = _area_and_grad(x, delta, self.p)
        # knot k (k >= 1) depends on slopes 1..k
        gv = delta * np.cumsum(gx[1:][::-1])[::-1]
        return phi, gv


def _spg(fun, project, x0, max_iter, tol, memory=10):
    """Spectral projected gradient with a nonmonotone Armijo line search."""
    x = project(x0)
    f, g = fun(x)
    pg = project(x - g) - x
    pg_norm = float(np.max(np.abs(pg)))
    step = 1.0 / max(pg_norm, 1e-12)
    hist = deque([f], maxlen=memory)
    best = deque([f], maxlen=40)
    it = 0
    for it in range(1, max_iter + 1):
        d = project(x - step * g) - x
        gd = float(g @ d)
        if gd >= 0 or not np.isfinite(gd):
            break
        fref = max(hist)
        t = 1.0
        while True:
            xn = x + t * d
            fn, gn = fun(xn)
            if fn <= fref + 1e-4 * t * gd:
                break
            # quadratic interpolation, safeguarded
            denom = 2.0 * (fn - f - t * gd)
            tq = -gd * t * t / denom if denom > 0 else 0.5 * t
            t = min(max(tq, 0.1 * t), 0.5 * t)
            if t * float(np.max(np.abs(d))) <= 1e-15 * (1.0 + float(np.max(np.abs(x)))):
                return x, f, it
        s = xn - x
        yv = gn - g
        sy = float(s @ yv)
        step = float(s @ s) / sy if sy > 0 else 1e10
        step = min(max(step, 1e-12), 1e12)
        x, f, g = xn, fn, gn
        hist.append(f)
        best.append(f)
        pg_norm = float(np.max(np.abs(project(x - g) - x)))
        if pg_norm <= tol:
            break
        # stalled: no relative progress over a full window
        if len(best) == best.maxlen and best[0] - min(best) <= 1e-15 * abs(best[0]):
            break
    return x, f, it


class _Solver:
    def __init__(self, ctx: RateContext, y: float, level: float, settings: DirectSettings):
        mu = ctx.mu
        top = ctx.model.support_range()[1]
        hi = top - 1e-9 * max(1.0, abs(top)) if math.isfinite(top) else math.inf
        if not ctx.conjugate.uses_closed_form and not math.isfinite(hi):
            raise ValueError("numeric conjugates need a bounded support")
        table_hi = hi if math.isfinite(hi) else mu + 50.0
        self.table = ConjugateTable(ctx, mu, table_hi)
        self.prof = _Profile(self.table, ctx.p, y, mu, hi)
        self.ctx = ctx
        self.y = y
        self.level = level
        self.alpha = ctx.alpha
        self.cfg = settings
        self.iterations = 0

    # ratio formulation: minimize cost / area^alpha on [0, 1]
    def solve_ratio(self, v0):
        prof = self.prof
        a = self.alpha

        def fun(v):
            c, gc = prof.cost(v, 1.0)
            phi, gphi = prof.area(v, 1.0)
            if phi <= 0:
                return math.inf, gc
            r = c / phi**a
            return r, gc / phi**a - a * r / phi * gphi

        v, f, it = _spg(fun, prof.project, v0, 4 * self.cfg.max_inner, self.cfg.inner_tol)
        self.iterations += it
        return v, f

    # constrained formulation at a fixed horizon
    def solve_fixed(self, T, v0, mult0=1.0):
        prof = self.prof
        L = self.level
        m = len(v0)
        flat = np.full(m, prof.lo)
        if prof.area(flat, T)[0] >= L:
            return flat, 0.0, 0.0
        if math.isfinite(prof.hi) and prof.area(np.full(m, prof.hi), T)[0] < L:
            return None, math.inf, 0.0
        lam = mult0
        rho = 10.0
        v = prof.project(v0)
        viol_prev = math.inf
        for _ in range(self.cfg.max_outer):

            def fun(w, lam=lam, rho=rho):
                c, gc = prof.cost(w, T)
                phi, gphi = prof.area(w, T)
                s = max(0.0, L - phi + lam / rho)
                return c + 0.5 * rho * s * s, gc - rho * s * gphi

            v, _, it = _spg(fun, prof.project, v, self.cfg.max_inner, self.cfg.inner_tol)
            self.iterations += it
            phi = prof.area(v, T)[0]
            viol = max(0.0, L - phi)
            lam = max(0.0, lam + rho * (L - phi))
            if viol <= self.cfg.feas_tol * L and abs(L - phi) <= 1e-8 * L:
                break
            if viol > 0.25 * viol_prev:
                rho *= 5.0
            viol_prev = viol
        c = prof.cost(v, T)[0]
        phi = prof.area(v, T)[0]
        if phi < L * (1 - 1e-8):
            # scale up the positive part slightly to restore feasibility
            return v, math.inf, lam
        return v, c, lam


def _initial_slopes(ctx: RateContext, m: int, hi: float, y: float):
    s = (np.arange(m) + 0.5) / m
    top = min(abs(ctx.mu), 0.9 * hi) if math.isfinite(hi) else abs(ctx.mu)
    if y > 0:
        top *= max(0.0, 1.0 - y / ctx.ybar)
    return top + (ctx.mu - top) * s


def _resample(v, m):
    """Slope profile on m cells from one on len(v) cells (piecewise constant)."""
    n = len(v)
    if n == m:
        return v.copy()
    idx = np.minimum(((np.arange(m) + 0.5) * n / m).astype(int), n - 1)
    return v[idx]


def _trim(v, T, y, mu):
    """Drop trailing zero-cost segments that follow the return to 0."""
    m = len(v)
    delta = T / m
    x = np.concatenate([[y], y + delta * np.cumsum(v)])
    below = np.nonzero(x[1:] <= 0)[0]
    if len(below) == 0:
        return v, T, 1.0
    k = below[0] + 1
    seg = v[:k].copy()
    prev = x[k - 1]
    # the last kept segment ends exactly at the return time
    frac = prev / (prev - x[k]) if x[k] < prev else 1.0
    T_hit = delta * (k - 1 + frac)
    return seg, T_hit, frac


def _stationarity(ctx, table, v, T, y, p):
    """Fit grad Lambda*(v_i) = c - ell p A_i on interior segments."""
    m = len(v)
    delta = T / m
    x = np.concatenate([[y], y + delta * np.cumsum(v)])
    pos = (x[:-1] > 0) & (x[1:] > 0)
    interior = pos & (v > ctx.mu + 1e-7)
    interior[0] = interior[0] and y > 0
    if interior.sum() < 4:
        return {"stationarity_residual": float("nan"), "stationarity_step": float("nan"), "ell": None}
    xp = np.maximum(x, 0.0)
    with np.errstate(divide="ignore"):
        g = np.where(xp > 0, xp ** (p - 1.0), 0.0)
    cumA = np.concatenate([[0.0], np.cumsum(0.5 * delta * (g[:-1] + g[1:]))])
    A = 0.5 * (cumA[:-1] + cumA[1:])
    gl = np.asarray(table.grad(v[interior]), dtype=float)
    Ai = A[interior]
    design = np.column_stack([np.ones_like(Ai), -p * Ai])
    coef, *_ = np.linalg.lstsq(design, gl, rcond=None)
    resid = float(np.max(np.abs(design @ coef - gl)))
    step = float(np.max(np.abs(np.diff(gl)))) if len(gl) > 1 else float("nan")
    return {"stationarity_residual": resid, "stationarity_step": step, "ell": float(coef[1])}


def _finish(solver, v, T, value, method_note, extra):
    ctx = solver.ctx
    y = solver.y
    segs_v, T_hit, frac = _trim(v, T, y, ctx.mu)
    delta = T / len(v)
    durations = np.full(len(segs_v), delta)
    if len(durations):
        durations[-1] = delta * frac
    if T_hit <= 0 or len(segs_v) == 0:
        path = BVPath(T, y, [(T, ctx.mu)])
        T_hit = T
    else:
        T_hit = float(durations.sum())
        path = BVPath(T_hit, y, list(zip(durations.tolist(), segs_v.tolist())))
    phi = solver.prof.area(v, T)[0]
    diag = {
        "iterations": solver.iterations,
        "constraint_residual": max(0.0, solver.level - phi) / solver.level,
        "area": phi,
        "grid_size": len(v),
        "formulation": method_note,
        "grid_horizon": T,
    }
    diag.update(_stationarity(ctx, solver.table, v, T, y, ctx.p))
    diag.update(extra)
    ell = diag.pop("ell")
    return VariationalSolution(float(y), float(value), "direct", float(T_hit), path,
                               z=float(v[0]), ell=ell, level=solver.level, diagnostics=diag)


def _horizon_window(solver, upper):
    """Bracket for the optimal horizon from the start-at-0 optimum and the straight descent."""
    ctx = solver.ctx
    base = _Solver(ctx, 0.0, solver.level, solver.cfg)
    v, scale, _ = _run_ratio(base, 64)
    T0 = scale * _trim(v, 1.0, 0.0, ctx.mu)[1]
    descent = solver.y / abs(ctx.mu)
    lo_T = 0.25 * min(T0, ctx.ybar / abs(ctx.mu))
    hi_T = 2.0 * max(T0, descent)
    return min(lo_T, upper / 2.0), min(hi_T, upper)


def _run_ratio(solver, m, v0=None):
    prof = solver.prof
    v0 = _initial_slopes(solver.ctx, m, prof.hi, 0.0) if v0 is None else _resample(v0, m)
    v, r = solver.solve_ratio(v0)
    phi1 = prof.area(v, 1.0)[0]
    scale = (solver.level / phi1) ** (1.0 / (1.0 + solver.ctx.p))
    return v, scale, r * solver.level**solver.alpha


def _run_constrained(solver, m, M, T_hint=None, v0=None, T_cap=None):
    prof = solver.prof
    cfg = solver.cfg
    upper = M if T_cap is None else min(M, T_cap)
    if v0 is None:
        v0 = _initial_slopes(solver.ctx, m, prof.hi, solver.y)
    v0 = _resample(v0, m)
    cache = {}
    warm = {"v": v0, "lam": 1.0}

    def value(T, mm):
        key = (round(math.log(T), 12), mm)
        if key in cache:
            return cache[key][0]
        v, c, lam = solver.solve_fixed(T, _resample(warm["v"], mm), warm["lam"])
        cache[key] = (c, v, lam)
        if v is not None and math.isfinite(c):
            warm["v"], warm["lam"] = v, max(lam, 1e-6)
        return c

    # coarse geometric scan at reduced resolution
    mc = max(16, m // 4)
    if T_hint is not None and 0 < T_hint <= upper:
        lo_T, hi_T = T_hint / 2.0, min(upper, T_hint * 2.0)
    else:
        lo_T, hi_T = _horizon_window(solver, upper)
    # scan downward from the long horizons, where the problem is benign,
    # and stop once the value has clearly turned upward
    grid, vals = [], []
    for T in np.geomspace(lo_T, hi_T, cfg.coarse_points)[::-1]:
        grid.insert(0, float(T))
        vals.insert(0, value(float(T), mc))
        finite = [x for x in vals if math.isfinite(x)]
        if finite and vals[0] > 1.05 * min(finite) and len(vals) >= 3:
            break
    # widen the window while the best value sits on its edge
    while True:
        k = int(np.argmin(vals))
        if k == 0 and grid[0] > upper * 1e-4 and math.isfinite(vals[0]):
            T = grid[0] / 2.0
            grid.insert(0, T)
            vals.insert(0, value(T, mc))
        elif k == len(grid) - 1 and grid[-1] < upper:
            T = min(upper, grid[-1] * 2.0)
            grid.append(T)
            vals.append(value(T, mc))
        else:
            break
    grid = np.array(grid)
    if not math.isfinite(vals[k]):
        raise InfeasibleGrid("no slope profile meets the area constraint for T <= M")
    if vals[k] == 0.0:
        T_first = float(grid[np.nonzero(np.array(vals) == 0.0)[0][0]])
        return np.full(m, solver.prof.lo), T_first, 0.0
    a = float(grid[max(k - 1, 0)])
    b = float(grid[min(k + 1, len(grid) - 1)])
    # golden section on log T at full resolution
    la, lb = math.log(a), math.log(b)
    warm["v"] = cache[(round(math.log(float(grid[k])), 12), mc)][1]
    c1 = lb - _GOLD * (lb - la)
    c2 = la + _GOLD * (lb - la)
    f1, f2 = value(math.exp(c1), m), value(math.exp(c2), m)
    for _ in range(cfg.golden_iters):
        if lb - la <= cfg.t_rel_tol:
            break
        if f1 <= f2:
            lb, c2, f2 = c2, c1, f1
            c1 = lb - _GOLD * (lb - la)
            f1 = value(math.exp(c1), m)
        else:
            la, c1, f1 = c1, c2, f2
            c2 = la + _GOLD * (lb - la)
            f2 = value(math.exp(c2), m)
    # smallest T among the best values, for determinism
    best = min((val[0], math.exp(key[0])) for key, val in cache.items() if key[1] == m)
    T_best = best[1]
    c, v, lam = cache[(round(math.log(T_best), 12), m)]
    return v, T_best, c


def solve_direct(ctx: RateContext, y: float, m: int = 400, *, level: float = 1.0,
                 formulation: str = "auto", richardson: bool = True, T_hint: float | None = None,
                 T_cap: float | None = None, settings: DirectSettings | None = None,
                 warm_start=None) -> VariationalSolution:
    """Minimal path cost from y over concave paths with m slope cells and area >= level.

    ``formulation`` selects the scale-free ratio problem (y = 0 only), the
    constrained problem with an outer horizon search, or ``auto`` (ratio
    when y = 0).  With ``richardson`` the problem is re-solved on 2m cells
    and the extrapolation (4 v_2m - v_m) / 3 is recorded in the diagnostics.
    """
    if m < 16:
        raise ValueError("grid size m must be at least 16")
    if y < 0:
        raise ValueError("y must be nonnegative")
    if formulation not in ("auto", "ratio", "constrained"):
        raise ValueError("formulation must be auto, ratio or constrained")
    if formulation == "ratio" and y != 0:
        raise ValueError("the ratio formulation needs y = 0")
    settings = settings or DirectSettings()
    use_ratio = formulation == "ratio" or (formulation == "auto" and y == 0 and T_cap is None)
    solver = _Solver(ctx, float(y), float(level), settings)
    bound = horizon_bound(ctx, y * level ** (-ctx.alpha)) if level != 1.0 else horizon_bound(ctx, y)
    M = bound.M * level**ctx.alpha
    extra = {"M": M}

    def run(mm, v0=None):
        if use_ratio:
            v, scale, val = _run_ratio(solver, mm, v0)
            return v, scale, val
        return _run_constrained(solver, mm, M, T_hint=T_hint, v0=v0, T_cap=T_cap)

    descent_area = y ** (1.0 + ctx.p) / ((1.0 + ctx.p) * abs(ctx.mu))
    if descent_area >= level * (1.0 - 1e-12):
        # the zero-cost straight descent already carries enough area
        T = y / abs(ctx.mu)
        path = BVPath(T, y, [(T, ctx.mu)])
        diag = {"iterations": 0, "constraint_residual": max(0.0, level - descent_area) / level,
                "area": descent_area, "grid_size": m, "formulation": "descent", "M": M}
        return VariationalSolution(float(y), 0.0, "direct", T, path, z=ctx.mu, ell=0.0,
                                   level=float(level), diagnostics=diag)
    v, T, val = run(m, warm_start)
    if richardson and val > 0:
        if not use_ratio:
            v2, T2, val2 = _run_constrained(solver, 2 * m, M, T_hint=T, v0=v, T_cap=T_cap)
        else:
            v2, T2, val2 = run(2 * m, v)
        extra["value_2m"] = val2
        extra["richardson"] = (4.0 * val2 - val) / 3.0
    return _finish(solver, v, T, val, "ratio" if use_ratio else "constrained", extra)
