"""Exact computations for lattice increment laws on the capped state space {0..K}.

The capped chain moves by X' = min(max(X + U, 0), K).  Everything here is
deterministic: stationary laws by GTH elimination, the time-reversal duality
by enumeration or dynamic programming, and the cycle law of (T_1, W_1).
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numba
import numpy as np

from .models import IncrementModel, tilt_root_beta

__all__ = [
    "ReducibleChain",
    "LatticeChain",
    "StationaryLaw",
    "DualityResult",
    "LastCycleReport",
    "CycleLaw",
    "AreaUnits",
    "choose_cap",
    "stationary",
    "stationary_tail_slope",
    "reversed_kernel",
    "duality_check",
    "last_cycle_bounds_check",
    "exact_cycle_law",
    "write_stationary_csv",
    "write_tail_csv",
]


class ReducibleChain(RuntimeError):
    pass


@dataclass(frozen=True)
class LatticeChain:
    values: tuple
    probs: tuple
    K: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if vals.shape != probs.shape or vals.ndim != 1 or len(vals) == 0:
            raise ValueError("values and probs must be equal-length 1-D sequences")
        if np.any(vals != np.round(vals)):
            raise ValueError("lattice values must be integers")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        if float(vals @ probs) >= 0:
            raise ValueError("the increment mean must be negative")
        if int(self.K) < 1:
            raise ValueError("K must be at least 1")
        keep = probs > 0
        object.__setattr__(self, "values", tuple(int(v) for v in vals[keep]))
        object.__setattr__(self, "probs", tuple(float(p) for p in probs[keep]))
        object.__setattr__(self, "K", int(self.K))

    @classmethod
    def from_model(cls, model: IncrementModel, K: int | None = None, p: float = 1.0,
                   tol: float = 1e-12) -> "LatticeChain":
        lat = model.lattice_support
        if lat is None:
            raise ValueError(f"{model.family} is not a lattice family")
        vals, probs = lat
        if K is None:
            K = choose_cap(model, p, tol)
        return cls(tuple(vals.tolist()), tuple(probs.tolist()), K)

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    @property
    def states(self) -> int:
        return self.K + 1

    @cached_property
    def matrix(self) -> np.ndarray:
        n = self.states
        P = np.zeros((n, n))
        x = np.arange(n)
        for u, q in zip(self.values, self.probs):
            np.add.at(P, (x, np.clip(x + u, 0, self.K)), q)
        return P


def choose_cap(model: IncrementModel, p: float = 1.0, tol: float = 1e-12) -> int:
    """Smallest K with exp(-beta K) K^p <= tol, the geometric tail estimate of pi(K) K^p."""
    beta = tilt_root_beta(model)
    K = 1
    while -beta * K + p * math.log(K) > math.log(tol):
        K += 1
    return K


# -- stationary law -------------------------------------------------------

@dataclass(frozen=True)
class StationaryLaw:
    pi: np.ndarray
    residual: float
    leak: float

    @property
    def mean(self) -> float:
        return float(np.arange(len(self.pi)) @ self.pi)


def _reachable_from_zero(P):
    seen = np.zeros(len(P), dtype=bool)
    seen[0] = True
    frontier = np.array([0])
    while len(frontier):
        nxt = np.nonzero(P[frontier].sum(axis=0) > 0)[0]
        nxt = nxt[~seen[nxt]]
        seen[nxt] = True
        frontier = nxt
    return np.nonzero(seen)[0]


def _gth(P):
    """Grassmann-Taksar-Heyman elimination; subtraction free, so tiny masses stay accurate."""
    A = P.copy()
    n = len(A)
    for k in range(n - 1, 0, -1):
        s = A[k, :k].sum()
        if s <= 0:
            raise ReducibleChain(f"state {k} cannot reach the lower states")
        A[:k, k] /= s
        A[:k, :k] += np.outer(A[:k, k], A[k, :k])
    pi = np.zeros(n)
    pi[0] = 1.0
    for j in range(1, n):
        pi[j] = pi[:j] @ A[:j, j]
    return pi / pi.sum()


def stationary(chain: LatticeChain) -> StationaryLaw:
    """Invariant law on the class reachable from 0 (zero elsewhere)."""
    P = chain.matrix
    cls = _reachable_from_zero(P)
    sub = P[np.ix_(cls, cls)]
    if not np.allclose(sub.sum(axis=1), 1.0, atol=1e-14):
        raise ReducibleChain("the class reachable from 0 is not closed")
    pi = np.zeros(chain.states)
    pi[cls] = _gth(sub)
    resid = float(np.max(np.abs(pi @ P - pi)))
    return StationaryLaw(pi, resid, float(pi[-1]))


def stationary_tail_slope(pi: np.ndarray, lo: int | None = None, hi: int | None = None) -> float:
    """Least-squares slope of log pi(x) against x over [lo, hi] (default: middle half)."""
    K = len(pi) - 1
    lo = K // 4 if lo is None else lo
    hi = 3 * K // 4 if hi is None else hi
    x = np.arange(lo, hi + 1)
    y = pi[lo:hi + 1]
    if np.any(y <= 0):
        raise ValueError("pi vanishes inside the fitting range")
    return float(np.polyfit(x, np.log(y), 1)[0])


def reversed_kernel(chain: LatticeChain, pi: np.ndarray | None = None) -> np.ndarray:
    """P*(x, y) = pi(y) P(y, x) / pi(x) on the support of pi; zero rows elsewhere."""
    if pi is None:
        pi = stationary(chain).pi
    P = chain.matrix
    R = np.zeros_like(P)
    live = pi > 0
    R[live] = (P.T[live] * pi[None, :]) / pi[live, None]
    return R


# -- area units -----------------------------------------------------------

@dataclass(frozen=True)
class AreaUnits:
    """Integer area increments k(x) ~ x^p / h.

    For integer p the unit is h = 1 and the increments are exact.  Otherwise
    ``mode`` picks floor (inner, area underestimated) or ceil (outer).
    """

    p: float
    h: float = 1.0
    mode: str = "exact"

    @classmethod
    def for_range(cls, p: float, area_max: float, mode: str = "inner") -> "AreaUnits":
        if float(p).is_integer():
            return cls(p, 1.0, "exact")
        return cls(p, min(1.0, area_max / 2**16), mode)

    def increments(self, K: int) -> np.ndarray:
        raw = np.arange(K + 1, dtype=float) ** self.p / self.h
        if self.mode == "exact":
            out = np.round(raw)
        elif self.mode == "inner":
            out = np.floor(raw + 1e-9)
        elif self.mode == "outer":
            out = np.ceil(raw - 1e-9)
        else:
            raise ValueError(f"unknown binning mode {self.mode!r}")
        out[0] = 0
        return out.astype(np.int64)

    def level(self, x: float) -> int:
        """Number of units needed for area >= x."""
        return max(0, int(math.ceil(x / self.h - 1e-9)))


# -- duality ----------------------------------------------------------------

@dataclass(frozen=True)
class DualityResult:
    lhs: float
    rhs: float
    gap: float
    mode: str

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.gap))


def _lhs_exhaustive(chain, n, need, kinc):
    vals = np.array(chain.values)
    probs = np.array(chain.probs)
    idx = np.array(list(itertools.product(range(len(vals)), repeat=n)), dtype=np.int64).reshape(-1, n)
    w = np.prod(probs[idx], axis=1)
    x = np.zeros(len(idx), dtype=np.int64)
    area = np.zeros(len(idx), dtype=np.int64)
    ok = np.ones(len(idx), dtype=bool)
    for i in range(n):
        x = np.clip(x + vals[idx[:, i]], 0, chain.K)
        area += kinc[x]
        if i < n - 1:
            ok &= x > 0
    return float(w[ok & (area >= need)].sum())


def _rhs_exhaustive(chain, n, need, kinc, pi, R):
    # steps-to-zero under P*, to prune reversed paths that cannot end at 0
    S = chain.states
    dist = np.full(S, np.iinfo(np.int64).max)
    dist[0] = 0
    for d in range(1, n + 1):
        can = (R[:, dist <= d - 1] > 0).any(axis=1) & (dist > d)
        dist[can] = d
    succ = [np.nonzero(R[y] > 0)[0] for y in range(S)]
    total = 0.0
    starts = np.nonzero((pi > 0) & (dist <= n))[0]
    for y0 in starts:
        stack = [(int(y0), 0, float(pi[y0]), int(kinc[y0]))]
        while stack:
            y, j, w, area = stack.pop()
            if j == n:
                if y == 0 and area >= need:
                    total += w
                continue
            for z in succ[y]:
                z = int(z)
                if dist[z] > n - j - 1:
                    continue
                if j + 1 < n:
                    if z == 0:
                        continue
                    stack.append((z, j + 1, w * R[y, z], area + int(kinc[z])))
                else:
                    stack.append((z, j + 1, w * R[y, z], area))
    return total


@numba.njit(cache=True)
def _shift_rows(w, kinc, cap):
    out = np.zeros_like(w)
    S, C1 = w.shape
    for x in range(S):
        k = kinc[x]
        for a in range(C1):
            if w[x, a] != 0.0:
                b = a + k
                if b > cap:
                    b = cap
                out[x, b] += w[x, a]
    return out


def _lhs_dp(chain, n, need, kinc):
    P = chain.matrix
    v = np.zeros((chain.states, need + 1))
    v[0, 0] = 1.0
    for i in range(1, n + 1):
        v = _shift_rows(P.T @ v, kinc, need)
        if i < n:
            v[0] = 0.0
    return float(v[:, need].sum())


def _rhs_dp(chain, n, need, kinc, pi, R):
    v = np.zeros((chain.states, need + 1))
    v[np.arange(chain.states), np.minimum(kinc, need)] = pi
    for j in range(1, n + 1):
        w = R.T @ v
        if j < n:
            v = _shift_rows(w, kinc, need)
            v[0] = 0.0
        else:
            v = w
    return float(v[0, need])


def duality_check(chain: LatticeChain, n: int, b: float, p: float = 1.0, mode: str = "auto",
                  pi0: float | None = None, units: AreaUnits | None = None) -> DualityResult:
    """Both sides of the time-reversal identity for g(x_1..x_n) = 1{sum x_i^p >= b, x_i > 0 for i < n}.

    lhs = P_0(g(X_1..X_n)); rhs = E_pi[g(X*_{n-1}, ..., X*_0) 1{X*_n = 0}] / pi(0).
    ``pi0`` overrides the divisor (a wrong value should show a large gap).
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if mode == "auto":
        mode = "exhaustive" if n <= 12 else "dp"
    if mode == "exhaustive" and n > 14:
        raise ValueError("exhaustive mode is limited to n <= 14")
    if mode == "dp" and n > 200:
        raise ValueError("dp mode is limited to n <= 200")
    units = units or AreaUnits.for_range(p, max(b, 1.0))
    kinc = units.increments(chain.K)
    need = units.level(b)
    law = stationary(chain)
    R = reversed_kernel(chain, law.pi)
    if mode == "exhaustive":
        lhs = _lhs_exhaustive(chain, n, need, kinc)
        num = _rhs_exhaustive(chain, n, need, kinc, law.pi, R)
    elif mode == "dp":
        lhs = _lhs_dp(chain, n, need, kinc)
        num = _rhs_dp(chain, n, need, kinc, law.pi, R)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    rhs = float(num / (law.pi[0] if pi0 is None else pi0))
    return DualityResult(float(lhs), rhs, abs(float(lhs) - rhs), mode)


# -- last-cycle bounds ----------------------------------------------------

@dataclass(frozen=True)
class LastCycleReport:
    n: int
    x: float
    target: float  # P_pi(sum_{k<=T*} (X*_k)^p >= x, X*_n = 0)
    upper: float  # (n + 1) P_pi(sum_{k<=T} X_k^p >= x)
    lower: float  # pi(0)^2 / 2 * P_0(W_1 >= x), without the exponentially small correction
    lower_strict: float  # pi(0) P_0(W_1 >= x, T <= n - n0) inf_{k >= n0} P_0(X_k = 0)
    n0: int
    upper_holds: bool
    lower_holds: bool
    lower_strict_holds: bool
    long_cycle_mass: float = 0.0  # P_0(W_1 >= x, T > n - n0), the part the correction term absorbs
    cycle_mass: float = 0.0  # P_0(W_1 >= x)

    @property
    def in_regime(self) -> bool:
        """True when n exceeds n0 and cycles too long to fit carry under 10% of P_0(W_1 >= x)."""
        return self.n > self.n0 and self.long_cycle_mass <= 0.1 * self.cycle_mass


def _excursion_hit(P, start, kinc, need, max_steps):
    """P(area including the start reaches ``need`` before the first return to 0 at step >= 1).

    Also returns the per-step probability of returning to 0 with the area reached.
    """
    v = np.zeros((len(P), need + 1))
    v[np.arange(len(P)), np.minimum(kinc, need)] = start
    hit_done = 0.0
    returned = []
    for _ in range(max_steps):
        hit_done += v[:, need].sum()
        v[:, need] = 0.0
        w = _shift_rows(P.T @ v, kinc, need)
        returned.append(w[0, need] + 0.0)
        # mass returning before the level is reached is lost; reaching it on the
        # returning step is impossible since k(0) = 0
        w[0] = 0.0
        v = w
        if not v.any():
            break
    hit_done += v[:, need].sum()
    return hit_done, returned


def last_cycle_bounds_check(chain: LatticeChain, n: int, x: float, p: float = 1.0,
                            units: AreaUnits | None = None, horizon: int | None = None) -> LastCycleReport:
    """Evaluate the last-cycle probability under the reversed stationary chain and its two bounds."""
    units = units or AreaUnits.for_range(p, max(x, 1.0))
    kinc = units.increments(chain.K)
    need = units.level(x)
    law = stationary(chain)
    pi = law.pi
    P = chain.matrix
    R = reversed_kernel(chain, pi)
    S = chain.states
    steps = need + 2
    # P_0(X_k = 0) for k up to a horizon long enough to see it settle
    H = horizon or max(4 * n, 2000)
    e0 = np.zeros(S)
    e0[0] = 1.0
    ret = np.empty(H + 1)
    vec = e0.copy()
    for k in range(H + 1):
        ret[k] = vec[0]
        vec = vec @ P
    tail_inf = np.minimum.accumulate(ret[::-1])[::-1]
    ok = np.nonzero(tail_inf >= pi[0] / 2.0)[0]
    n0 = int(ok[0]) if len(ok) else H + 1
    # target: reversed chain from pi, first return at m with the area reached, then 0 -> 0 in n - m steps
    v = np.zeros((S, need + 1))
    v[np.arange(S), np.minimum(kinc, need)] = pi
    r = np.zeros(n + 1)
    for m in range(1, n + 1):
        w = _shift_rows(R.T @ v, kinc, need)
        r[m] = w[0, need]
        w[0] = 0.0
        v = w
    back = np.empty(n + 1)
    vec = e0.copy()
    for j in range(n + 1):
        back[j] = vec[0]
        vec = vec @ R
    target = float(sum(r[m] * back[n - m] for m in range(1, n + 1)))
    hit_pi, _ = _excursion_hit(P, pi, kinc, need, steps)
    upper = (n + 1) * hit_pi
    # P_0 side: the start 0 contributes no area and X_0 = 0 is not a return
    hit_0, _ = _excursion_hit(P, e0, kinc, need, steps)
    lower = pi[0] ** 2 / 2.0 * hit_0
    # with T resolved, for the strict bound
    v = np.zeros((S, need + 1))
    v[0, 0] = 1.0
    by_T = 0.0
    for m in range(1, max(n - n0, 0) + 1):
        w = _shift_rows(P.T @ v, kinc, need)
        by_T += w[0, need]
        w[0] = 0.0
        v = w
    lower_strict = pi[0] * by_T * (tail_inf[n0] if n0 <= H else 0.0)
    slack = 1e-15
    return LastCycleReport(
        n, float(x), target, float(upper), float(lower), float(lower_strict), n0,
        bool(target <= upper + slack), bool(target + slack >= lower), bool(target + slack >= lower_strict),
        float(max(hit_0 - by_T, 0.0)), float(hit_0),
    )


# -- the cycle law ----------------------------------------------------------

@dataclass
class CycleLaw:
    tau_pmf: np.ndarray  # index m holds P(T_1 = m)
    mean_tau: float
    tau_truncation: float  # P(T_1 > len(tau_pmf) - 1)
    levels: np.ndarray
    tail: np.ndarray  # P(W_1 >= level)
    area_pmf: np.ndarray  # P(W_1 = a h) for a = 0..area_max / h
    units: AreaUnits
    cap_mass: float = 0.0  # mass that ever entered state K during the area sweep
    meta: dict = field(default_factory=dict)


@numba.njit(cache=True)
def _area_sweep(vals, probs, K, kinc, lev, amax):
    """Sweep the excursion from 0 in order of accumulated area.

    Every step away from 0 adds at least one unit, so mass at area a only
    feeds larger areas and one pass with a ring buffer covers the law.
    """
    R = min(int(kinc[K]), amax) + 1
    ring = np.zeros((K + 1, R))
    tail = np.zeros(lev.shape[0])
    pmf = np.zeros(amax + 1)
    top = np.zeros(R, dtype=np.int64)  # highest occupied state per ring slot
    cap = 0.0
    nl = lev.shape[0]
    # first step from 0
    for j in range(vals.shape[0]):
        y = vals[j]
        if y <= 0:
            pmf[0] += probs[j]
            continue
        if y > K:
            y = K
        if y == K:
            cap += probs[j]
        b = kinc[y]
        for i in range(nl):
            if lev[i] <= b:
                tail[i] += probs[j]
        if b <= amax:
            ring[y, b % R] += probs[j]
            if y > top[b % R]:
                top[b % R] = y
    first = 0
    while first < nl and lev[first] <= 0:
        tail[first] = 1.0
        first += 1
    for a in range(1, amax + 1):
        slot = a % R
        while first < nl and lev[first] <= a:
            first += 1
        hi = top[slot]
        for x in range(1, hi + 1):
            m = ring[x, slot]
            if m == 0.0:
                continue
            ring[x, slot] = 0.0
            for j in range(vals.shape[0]):
                y = x + vals[j]
                w = m * probs[j]
                if y <= 0:
                    pmf[a] += w
                    continue
                if y >= K:
                    y = K
                    cap += w
                b = a + kinc[y]
                i = first
                while i < nl and lev[i] <= b:
                    tail[i] += w
                    i += 1
                if b <= amax:
                    s = b % R
                    ring[y, s] += w
                    if y > top[s]:
                        top[s] = y
        top[slot] = 0
    return tail, pmf, cap


def exact_cycle_law(chain: LatticeChain, p: float = 1.0, max_tau: int = 10_000, levels=None,
                    units: AreaUnits | None = None, tau_tol: float = 1e-18) -> CycleLaw:
    """Law of T_1 (time DP killed at 0) and the tail of W_1 = sum_{k <= T_1} X_k^p at ``levels``.

    The tail is accumulated from the mass crossing each level, never as
    1 - P(W_1 < t), so it stays accurate far below machine epsilon.
    """
    if max_tau > 10_000:
        raise ValueError("max_tau is limited to 10^4")
    P = chain.matrix
    S = chain.states
    v = np.zeros(S)
    v[0] = 1.0
    pmf = [0.0]
    alive = 1.0
    mean_tail = 1.0  # sum of P(T_1 > m) over m >= 0
    for _ in range(max_tau):
        v = v @ P
        pmf.append(float(v[0]))
        v[0] = 0.0
        alive = float(v.sum())
        mean_tail += alive
        if alive < tau_tol:
            break
    levels = np.asarray([] if levels is None else levels, dtype=float)
    if np.any(np.diff(levels) < 0):
        raise ValueError("levels must be sorted")
    amax_real = float(levels[-1]) if len(levels) else 0.0
    units = units or AreaUnits.for_range(p, max(amax_real, 1.0))
    kinc = units.increments(chain.K)
    if np.any(kinc[1:] < 1):
        raise ValueError("every positive state must add at least one area unit")
    lev = np.array([units.level(t) for t in levels], dtype=np.int64)
    amax = int(lev[-1]) if len(lev) else 0
    tail, apmf, cap = _area_sweep(np.array(chain.values, dtype=np.int64), np.array(chain.probs),
                                  chain.K, kinc, lev, amax)
    return CycleLaw(np.array(pmf), mean_tail, alive, levels, tail, apmf, units, float(cap),
                    {"K": chain.K, "p": p})


# -- dumps ----------------------------------------------------------------

def write_stationary_csv(pi: np.ndarray, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "pi"])
        for x, v in enumerate(pi.tolist()):
            w.writerow([x, repr(v)])
    return path


def write_tail_csv(levels, tail, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "P(W1>=t)"])
        for t, v in zip(np.asarray(levels).tolist(), np.asarray(tail).tolist()):
            w.writerow([repr(t), repr(v)])
    return path
