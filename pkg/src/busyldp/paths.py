"""Exact finite-variation paths: reflection, hitting time, area, and an
approximate M1' distance between completed graphs.

A :class:`BVPath` is stored as slope segments plus lists of upward and
downward jumps, so reflection and the area functional are evaluated in
closed form rather than on a grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numba
import numpy as np

__all__ = [
    "PathError",
    "MeshTooCoarse",
    "BVPath",
    "StepDriftPath",
    "ParametrizedGraph",
    "M1Distance",
    "evaluate",
    "reflect",
    "hitting_time",
    "area_p",
    "discard_down_jumps",
    "to_graph",
    "m1p_distance",
    "format_path",
    "parse_path",
    "step_path",
    "step_graph",
]

# jump times closer than this (relative to the horizon) to a segment
# boundary are treated as sitting on it
_SNAP = 1e-12


class PathError(ValueError):
    pass


class MeshTooCoarse(ValueError):
    pass


def _pairs(items):
    return tuple((float(a), float(b)) for a, b in items)


@dataclass(frozen=True)
class BVPath:
    """Finite-variation path on [0, T].

    ``segments`` are (duration, slope) pairs covering [0, T]; ``ups`` and
    ``downs`` are (time, size) pairs with positive sizes.  ``start`` is the
    value just before any jump at time 0.
    """

    horizon: float
    start: float
    segments: tuple = ()
    ups: tuple = ()
    downs: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "start", float(self.start))
        segs = _pairs(self.segments)
        ups = tuple(sorted(_pairs(self.ups)))
        downs = tuple(sorted(_pairs(self.downs)))
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "ups", ups)
        object.__setattr__(self, "downs", downs)
        T = self.horizon
        if not T > 0:
            raise PathError("horizon must be positive")
        if not segs:
            raise PathError("at least one segment is required")
        if any(d <= 0 for d, _ in segs):
            raise PathError("segment durations must be positive")
        total = math.fsum(d for d, _ in segs)
        if abs(total - T) > 1e-9 * T:
            raise PathError(f"segment durations sum to {total}, expected {T}")
        for name, jumps in (("up", ups), ("down", downs)):
            times = [t for t, _ in jumps]
            if len(set(times)) != len(times):
                raise PathError(f"{name}-jump times must be distinct")
            if any(b <= 0 for _, b in jumps):
                raise PathError(f"{name}-jump sizes must be positive")
            if any(t < 0 or t > T * (1 + 1e-12) for t in times):
                raise PathError(f"{name}-jump times must lie in [0, T]")

    # -- derived quantities -----------------------------------------------
    @property
    def up_mass(self) -> float:
        return math.fsum(b for _, b in self.ups)

    @property
    def down_mass(self) -> float:
        return math.fsum(b for _, b in self.downs)

    @property
    def total_variation(self) -> float:
        return math.fsum(abs(s) * d for d, s in self.segments) + self.up_mass + self.down_mass

    @cached_property
    def events(self) -> list:
        """Time-ordered ('jump', t, up, down, t_raw) and ('seg', t0, duration, slope) events.

        ``t`` is snapped onto a nearby segment boundary; ``t_raw`` is the stored time.
        """
        return _events(self)

    @cached_property
    def knots(self):
        """Breakpoints with left/right values and the slope that follows each one."""
        times, left, right, slopes = [], [], [], []
        # every jump sits on a segment boundary, so it belongs to the open knot
        knot = [0.0, self.start, self.start]
        for ev in self.events:
            if ev[0] == "jump":
                knot[0] = ev[1]
                knot[2] += ev[2] - ev[3]
            else:
                _, t0, d, s = ev
                times.append(t0); left.append(knot[1]); right.append(knot[2]); slopes.append(s)
                x = knot[2] + s * d
                knot = [t0 + d, x, x]
        times.append(knot[0]); left.append(knot[1]); right.append(knot[2]); slopes.append(0.0)
        return (np.array(times), np.array(left), np.array(right), np.array(slopes))


def _events(path: BVPath) -> list:
    T = path.horizon
    tol = _SNAP * T
    jumps = {}
    for tj, b in path.ups:
        jumps.setdefault(tj, [0.0, 0.0])[0] += b
    for tj, b in path.downs:
        jumps.setdefault(tj, [0.0, 0.0])[1] += b
    jtimes = sorted(jumps)
    out = []
    k = 0
    t0 = 0.0
    n = len(path.segments)
    for i, (d, s) in enumerate(path.segments):
        t1 = T if i == n - 1 else t0 + d
        while k < len(jtimes) and jtimes[k] <= t0 + tol:
            tj = jtimes[k]
            out.append(("jump", t0 if abs(tj - t0) <= tol else tj, *jumps[tj], tj))
            k += 1
        cur = t0
        while k < len(jtimes) and jtimes[k] < t1 - tol:
            tj = jtimes[k]
            out.append(("seg", cur, tj - cur, s))
            out.append(("jump", tj, *jumps[tj], tj))
            cur = tj
            k += 1
        out.append(("seg", cur, d if cur == t0 else t1 - cur, s))
        t0 = t1
    while k < len(jtimes):
        tj = jtimes[k]
        out.append(("jump", T if abs(tj - T) <= tol else tj, *jumps[tj], tj))
        k += 1
    return out


@dataclass(frozen=True)
class StepDriftPath:
    """Drift ``drift`` plus finitely many positive jumps on [0, 1]."""

    drift: float
    jumps: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "drift", float(self.drift))
        jumps = tuple(sorted(_pairs(self.jumps)))
        object.__setattr__(self, "jumps", jumps)
        if self.drift < 0:
            raise PathError("drift must be nonnegative")
        times = [u for u, _ in jumps]
        if len(set(times)) != len(times):
            raise PathError("jump times must be distinct")
        if any(not 0.0 <= u <= 1.0 for u in times):
            raise PathError("jump times must lie in [0, 1]")
        if any(b <= 0 for _, b in jumps):
            raise PathError("jump sizes must be positive")

    def __call__(self, t: float) -> float:
        return self.drift * t + math.fsum(b for u, b in self.jumps if u <= t)

    def as_bvpath(self) -> BVPath:
        return BVPath(1.0, 0.0, [(1.0, self.drift)], ups=self.jumps)


# -- evaluation -----------------------------------------------------------

def evaluate(path: BVPath, t: float, left: bool = False) -> float:
    """Value xi(t), or the left limit xi(t-) when ``left`` is set."""
    if t < 0 or t > path.horizon * (1 + 1e-12):
        raise PathError(f"t={t} outside [0, {path.horizon}]")
    times, lv, rv, slopes = path.knots
    k = int(np.searchsorted(times, t, side="right")) - 1
    k = max(k, 0)
    if t == times[k]:
        return float(lv[k] if left else rv[k])
    return float(rv[k] + slopes[k] * (t - times[k]))


def reflect(path: BVPath) -> BVPath:
    """The reflected path xi(t) - min(0, inf_{s<=t} xi(s)), returned exactly."""
    segs, ups, downs = [], [], []
    r = None
    pre = path.start
    tol_scale = 1e-12 * (1.0 + path.total_variation + abs(path.start))
    for ev in path.events:
        if ev[0] == "jump":
            _, _, up, down, tj = ev
            if r is None:
                pre = pre + up - down
                continue
            net = up - down
            new = r + net
            if new <= 0.0:
                if r > 0.0:
                    downs.append((tj, r))
                r = 0.0
            else:
                if net > 0:
                    ups.append((tj, net))
                elif net < 0:
                    downs.append((tj, -net))
                r = new
        else:
            if r is None:
                r = max(pre, 0.0)
                start = r
            _, t0, d, s = ev
            end = r + s * d
            if end > tol_scale:
                segs.append((d, s))
                r = end
            elif r <= tol_scale and s <= 0:
                segs.append((d, 0.0))
                r = 0.0
            elif end >= -tol_scale:
                segs.append((d, s))
                r = 0.0
            else:
                h = r / (-s)
                segs.append((h, s))
                segs.append((d - h, 0.0))
                r = 0.0
    if r is None:
        start = max(pre, 0.0)
    return BVPath(path.horizon, start, segs, ups, downs)


def hitting_time(path: BVPath) -> float:
    """inf{t > 0 : R(xi)(t) <= 0}; ``math.inf`` when not reached on [0, T]."""
    tol_scale = 1e-12 * (1.0 + path.total_variation + abs(path.start))
    r = None
    pre = path.start
    for ev in path.events:
        if ev[0] == "jump":
            _, tj, up, down, _ = ev
            if r is None:
                pre = pre + up - down
                continue
            r = max(r + up - down, 0.0)
            if r <= 0.0:
                return tj
        else:
            _, t0, d, s = ev
            if r is None:
                r = max(pre, 0.0)
            if r <= 0.0 and s <= 0:
                return t0
            end = r + s * d
            if s < 0 and end <= tol_scale:
                return t0 + min(d, r / (-s))
            r = end
    return math.inf


def _seg_area(a: float, b: float, d: float, p: float) -> float:
    """Integral of max(x, 0)^p along the linear piece from a to b of length d."""
    a = max(a, 0.0)
    b = max(b, 0.0) if b > 0 else b
    if b <= 0 and a <= 0:
        return 0.0
    if b < 0:
        # positive part only on the leading fraction a / (a - b)
        d = d * a / (a - b)
        b = 0.0
    diff = b - a
    if abs(diff) <= 1e-9 * max(a, b):
        m = 0.5 * (a + b)
        return d * m**p * (1.0 + p * (p - 1.0) * (diff / m) ** 2 / 24.0)
    return d * (b ** (p + 1.0) - a ** (p + 1.0)) / ((p + 1.0) * diff)


def area_p(path: BVPath, p: float, upper: float | None = None) -> float:
    """Integral over [0, upper] of R(xi)(s)^p, piece by piece in closed form."""
    if p <= 0:
        raise PathError("p must be positive")
    upper = path.horizon if upper is None else float(upper)
    if upper < 0 or upper > path.horizon * (1 + 1e-12):
        raise PathError("upper must lie in [0, T]")
    refl = reflect(path)
    r = refl.start
    total = []
    for ev in refl.events:
        if ev[0] == "jump":
            r = r + ev[2] - ev[3]
            continue
        _, t0, d, s = ev
        if t0 >= upper:
            break
        dd = min(d, upper - t0)
        end = r + s * dd
        total.append(_seg_area(r, end, dd, p))
        r = r + s * d
    return math.fsum(total)


def discard_down_jumps(path: BVPath) -> BVPath:
    return BVPath(path.horizon, path.start, path.segments, path.ups, ())


def step_path(times, increments, horizon: float = 1.0, start: float = 0.0) -> BVPath:
    """Flat path with upward jumps ``increments`` at ``times`` (zero sizes dropped)."""
    times = np.asarray(times, dtype=float)
    inc = np.asarray(increments, dtype=float)
    keep = inc > 0
    ups = list(zip(times[keep].tolist(), inc[keep].tolist()))
    return BVPath(horizon, start, [(horizon, 0.0)], ups=ups)


# -- completed graphs and the M1' distance --------------------------------

@dataclass(frozen=True)
class ParametrizedGraph:
    """Ordered samples (u, t) along the extended completed graph of a path."""

    u: np.ndarray
    t: np.ndarray
    mesh: float

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        t = np.asarray(self.t, dtype=float)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "t", t)
        if u.shape != t.shape or u.ndim != 1 or len(u) < 1:
            raise PathError("u and t must be equal-length 1-D arrays")
        if np.any(np.diff(t) < 0):
            raise PathError("graph samples must be nondecreasing in t")

    def max_step(self) -> float:
        if len(self.u) < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(self.u)) + np.diff(self.t)))


@dataclass(frozen=True)
class M1Distance:
    value: float
    error_bound: float
    time_slack: float

    def __float__(self):
        return self.value


def _graph_vertices(path: BVPath):
    times, lv, rv, slopes = path.knots
    us = [0.0]
    ts = [0.0]
    for k in range(len(times)):
        us.append(lv[k]); ts.append(times[k])
        us.append(rv[k]); ts.append(times[k])
    # the leading (0, 0) vertex encodes the convention xi(0-) = 0
    return np.array(us), np.array(ts)


def to_graph(path: BVPath, mesh: float = 1e-3) -> ParametrizedGraph:
    """Sample the extended completed graph with consecutive L1 gaps <= mesh."""
    u, t = _graph_vertices(path)
    return _sample_polyline(u, t, mesh)


def step_graph(times, sizes, mesh: float = 1e-3, horizon: float = 1.0) -> ParametrizedGraph:
    """Completed graph of the pure-jump path 0 + sum of ``sizes`` at ``times``.

    Vectorized counterpart of ``to_graph(step_path(...))`` for paths with
    very many jumps; ``times`` must be nondecreasing in [0, horizon].
    """
    times = np.asarray(times, dtype=float)
    sizes = np.asarray(sizes, dtype=float)
    if times.shape != sizes.shape or np.any(np.diff(times) < 0):
        raise PathError("times must be nondecreasing and match sizes")
    if len(times) and (times[0] < 0 or times[-1] > horizon):
        raise PathError("jump times must lie in [0, horizon]")
    keep = sizes != 0
    times, sizes = times[keep], sizes[keep]
    # merge jumps sharing a time
    tk, first = np.unique(times, return_index=True)
    jk = np.add.reduceat(sizes, first) if len(sizes) else sizes
    after = np.cumsum(jk)
    before = after - jk
    u = np.empty(2 * len(tk) + 2)
    t = np.empty_like(u)
    u[0], t[0] = 0.0, 0.0
    u[1:-1:2], t[1:-1:2] = before, tk
    u[2:-1:2], t[2:-1:2] = after, tk
    u[-1] = after[-1] if len(after) else 0.0
    t[-1] = horizon
    return _sample_polyline(u, t, mesh)


def _sample_polyline(u, t, mesh):
    du = np.abs(np.diff(u))
    dt = np.diff(t)
    lengths = du + dt
    total = float(lengths.sum())
    nsub = np.maximum(np.ceil(lengths / mesh).astype(np.int64), 1)
    if nsub.sum() <= 4 * (total / mesh + len(u)) and nsub.sum() <= 200_000:
        live = lengths > 0
        counts = np.where(live, nsub, 0)
        seg = np.repeat(np.arange(len(lengths)), counts)
        start = np.repeat(np.cumsum(counts) - counts, counts)
        frac = (np.arange(len(seg)) - start + 1) / nsub[seg]
        us = np.concatenate([u[:1], u[seg] + frac * (u[seg + 1] - u[seg])])
        ts = np.concatenate([t[:1], t[seg] + frac * (t[seg + 1] - t[seg])])
        return ParametrizedGraph(us, np.maximum.accumulate(ts), mesh)
    # arc-length resampling for very finely broken graphs
    arc = np.concatenate([[0.0], np.cumsum(lengths)])
    n = max(int(math.ceil(total / mesh)), 1)
    s = np.linspace(0.0, total, n + 1)
    idx = np.clip(np.searchsorted(arc, s, side="right") - 1, 0, len(lengths) - 1)
    seg_len = np.where(lengths[idx] > 0, lengths[idx], 1.0)
    frac = np.clip((s - arc[idx]) / seg_len, 0.0, 1.0)
    us = u[idx] + frac * (u[idx + 1] - u[idx])
    ts = t[idx] + frac * (t[idx + 1] - t[idx])
    ts = np.maximum.accumulate(ts)
    return ParametrizedGraph(us, ts, mesh)


@numba.njit(cache=True)
def _banded_frechet(ua, ta, ub, tb, eps):
    # both rows are kept at +inf outside their active band, so each row
    # costs only the width of its band
    n = ua.shape[0]
    m = ub.shape[0]
    inf = np.inf
    prev = np.full(m, inf)
    cur = np.full(m, inf)
    lo = 0
    hi = 0
    plo = 0
    phi = -1
    for i in range(n):
        while lo < m and tb[lo] < ta[i] - eps:
            lo += 1
        if hi < lo:
            hi = lo
        while hi + 1 < m and tb[hi + 1] <= ta[i] + eps:
            hi += 1
        top = hi if lo < m else -1
        for j in range(lo, top + 1):
            if abs(tb[j] - ta[i]) > eps:
                continue
            if i == 0 and j == 0:
                best = 0.0
            else:
                best = inf
                if i > 0:
                    if prev[j] < best:
                        best = prev[j]
                    if j > 0 and prev[j - 1] < best:
                        best = prev[j - 1]
                if j > 0 and cur[j - 1] < best:
                    best = cur[j - 1]
            if best < inf:
                d = abs(ua[i] - ub[j])
                cur[j] = d if d > best else best
        for j in range(plo, phi + 1):
            prev[j] = inf
        for j in range(lo, top + 1):
            prev[j] = cur[j]
            cur[j] = inf
        plo = lo
        phi = top
    return prev[m - 1]


def m1p_distance(a: ParametrizedGraph, b: ParametrizedGraph, mesh: float | None = None) -> M1Distance:
    """Upper-bounding approximation of the M1' distance between two graphs.

    Minimizes ``eps + F(eps)`` where ``F(eps)`` is the best sup-norm gap in
    u over monotone couplings of the samples whose time gap stays within
    ``eps``.  The discretization error is at most twice the mesh.
    """
    mesh = max(a.mesh, b.mesh) if mesh is None else mesh
    for g in (a, b):
        if g.max_step() > mesh * (1 + 1e-9):
            raise MeshTooCoarse(f"graph step {g.max_step():.3g} exceeds mesh {mesh:.3g}")
    ua, ta, ub, tb = a.u, a.t, b.u, b.t
    span = max(ta[-1], tb[-1]) - min(ta[0], tb[0])
    cache = {}

    def f(eps):
        if eps not in cache:
            slack = eps * (1 + 1e-12) + 1e-15
            cache[eps] = eps + _banded_frechet(ua, ta, ub, tb, slack)
        return cache[eps]

    # f(eps) >= eps, so candidates beyond the best value found cannot win
    cands = [0.0] + [mesh * 2.0**k for k in range(0, 64) if mesh * 2.0**k <= 2 * span + mesh]
    vals = []
    for e in cands:
        if vals and e > min(vals):
            break
        vals.append(f(e))
    cands = cands[: len(vals) + 1]
    k = int(np.argmin(vals))
    lo = cands[max(k - 1, 0)]
    hi = cands[min(k + 1, len(cands) - 1)]
    # zoom in until the eps resolution is below the mesh
    while True:
        grid = np.linspace(lo, hi, 17)
        for e in grid:
            if e <= min(cache.values()):
                f(float(e))
        step = grid[1] - grid[0]
        if step <= 0.25 * mesh:
            break
        best = min(cache, key=lambda e: (cache[e], e))
        lo, hi = max(best - step, 0.0), best + step
    best_eps = min(cache, key=lambda e: (cache[e], e))
    return M1Distance(float(cache[best_eps]), 2.0 * mesh, float(best_eps))


# -- text literal format --------------------------------------------------

def format_path(path: BVPath) -> str:
    lines = [f"bvpath {path.horizon!r} {path.start!r}"]
    lines += [f"seg {d!r} {s!r}" for d, s in path.segments]
    lines += [f"up {t!r} {b!r}" for t, b in path.ups]
    lines += [f"down {t!r} {b!r}" for t, b in path.downs]
    return "\n".join(lines) + "\n"


def parse_path(text: str) -> BVPath:
    header = None
    segs, ups, downs = [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "bvpath" and len(parts) == 3:
                if header is not None:
                    raise PathError("duplicate header")
                header = (float(parts[1]), float(parts[2]))
            elif parts[0] in ("seg", "up", "down") and len(parts) == 3:
                if header is None:
                    raise PathError("missing 'bvpath T y' header")
                pair = (float(parts[1]), float(parts[2]))
                {"seg": segs, "up": ups, "down": downs}[parts[0]].append(pair)
            else:
                raise PathError(f"unrecognized record {parts[0]!r}")
        except (ValueError, PathError) as exc:
            raise PathError(f"line {lineno}: {exc}") from None
    if header is None:
        raise PathError("missing 'bvpath T y' header")
    return BVPath(header[0], header[1], segs, ups, downs)
