"""Tail-exponent estimation and the finite-dimensional checks.

A tail fit regresses -log P(. >= t) on t^a by weighted least squares, with
per-level weights from the binomial variance of the empirical frequency
(delta method: var log p_hat = (1 - p) / (N p)).  Levels with fewer than
``min_count`` exceedances are left out of the fit.  An optional log(t) column
absorbs a polynomial prefactor, which shifts the plain fit's slope when the
prefactor differs between otherwise equivalent samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .oracle import LatticeChain, exact_cycle_law, stationary
from .rates import estimate_lambda, make_context, rate_findim
from .sim import harvest_cycles, sample_Vbar_batch, sample_Ybar_batch
from .variational import solve_direct

__all__ = [
    "Z_BAND",
    "InsufficientTail",
    "TailEstimate",
    "fit_tail",
    "local_slopes",
    "binomial_band",
    "solver_B0star",
    "W1TailReport",
    "estimate_W1_tail",
    "VbarTailReport",
    "estimate_Vbar_tail",
    "FindimReport",
    "verify_findim",
]

# two-sided 99.9% normal quantile used for every confidence band
Z_BAND = 3.29


class InsufficientTail(ValueError):
    pass


@dataclass
class TailEstimate:
    levels: np.ndarray
    log_prob: np.ndarray
    se: np.ndarray
    counts: np.ndarray
    used: np.ndarray
    exponent: float
    slope: float
    slope_se: float
    intercept: float
    r2: float
    sample_size: int
    prefactor: float | None = None  # coefficient of log t when fitted

    @property
    def x(self) -> np.ndarray:
        return self.levels**self.exponent

    def band(self, z: float = Z_BAND) -> tuple[float, float]:
        return self.slope - z * self.slope_se, self.slope + z * self.slope_se

    def rows(self):
        for i in range(len(self.levels)):
            yield {
                "t": float(self.levels[i]),
                "x": float(self.x[i]),
                "count": int(self.counts[i]),
                "log_prob": float(self.log_prob[i]),
                "se": float(self.se[i]),
                "used": bool(self.used[i]),
            }

    def summary(self) -> dict:
        return {
            "exponent": self.exponent,
            "slope": self.slope,
            "slope_se": self.slope_se,
            "intercept": self.intercept,
            "r2": self.r2,
            "sample_size": self.sample_size,
            "levels_used": int(self.used.sum()),
            "prefactor": self.prefactor,
        }


def fit_tail(levels, counts, sample_size, exponent: float, min_count: int = 30,
             min_levels: int = 4, log_prefactor: bool = False) -> TailEstimate:
    """Weighted fit of -log(count / N) against level^exponent.

    With ``log_prefactor`` the fit also carries a log(level) term, and the slope
    is the coefficient of level^exponent in that three-term fit.

    ``sample_size`` may be a scalar or one size per level.  Raises
    InsufficientTail when fewer than ``min_levels`` levels have enough
    exceedances.
    """
    t = np.asarray(levels, dtype=float)
    c = np.asarray(counts, dtype=float)
    N = np.broadcast_to(np.asarray(sample_size, dtype=float), t.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        phat = c / N
        logp = np.log(phat)
        se = np.sqrt((1.0 - phat) / c)
    used = (c >= min_count) & (c < N)
    if used.sum() < min_levels:
        raise InsufficientTail(f"only {int(used.sum())} levels with at least {min_count} exceedances")
    x = t[used] ** exponent
    y = -logp[used]
    w = 1.0 / np.maximum(se[used], 1e-300) ** 2
    cols = [np.ones_like(x), x] + ([np.log(t[used])] if log_prefactor else [])
    X = np.column_stack(cols)
    A = X.T @ (w[:, None] * X)
    coef = np.linalg.solve(A, X.T @ (w * y))
    cov = np.linalg.inv(A)
    resid = y - X @ coef
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    r2 = 1.0 - float(np.sum(w * resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return TailEstimate(t, logp, se, c.astype(np.int64), used, float(exponent), float(coef[1]),
                        float(math.sqrt(cov[1, 1])), float(coef[0]), r2, int(N.max()),
                        float(coef[2]) if log_prefactor else None)


def local_slopes(levels, tail, exponent: float) -> np.ndarray:
    """Finite-difference slopes of log P against level^exponent; negative for a decaying tail."""
    x = np.asarray(levels, dtype=float) ** exponent
    return np.diff(np.log(np.asarray(tail, dtype=float))) / np.diff(x)


def binomial_band(counts, sample_size, p_exact, z: float = Z_BAND) -> np.ndarray:
    """True where count / N lies within z binomial standard errors of p_exact."""
    c = np.asarray(counts, dtype=float)
    p = np.asarray(p_exact, dtype=float)
    se = np.sqrt(p * (1.0 - p) / sample_size)
    return np.abs(c / sample_size - p) <= z * se + 1e-300


_B0_CACHE: dict = {}


def solver_B0star(model, p: float = 1.0, m: int = 400) -> float:
    """B0* from the direct solver at y = 0, cached per (model, p, m)."""
    key = (model.family, model.params, float(p), int(m))
    if key not in _B0_CACHE:
        ctx = make_context(model, p)
        _B0_CACHE[key] = solve_direct(ctx, 0.0, m).value
    return _B0_CACHE[key]


# -- W_1 --------------------------------------------------------------------

@dataclass
class W1TailReport:
    estimate: TailEstimate
    B0star: float
    oracle_tail: np.ndarray | None = None  # exact P(W_1 >= t) at the fitted levels
    in_band: np.ndarray | None = None
    oracle_levels: np.ndarray | None = None
    oracle_far_tail: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def oracle_slopes(self) -> np.ndarray | None:
        if self.oracle_far_tail is None:
            return None
        return local_slopes(self.oracle_levels, self.oracle_far_tail, self.estimate.exponent)

    def rows(self):
        for i, row in enumerate(self.estimate.rows()):
            if self.oracle_tail is not None:
                row["oracle_prob"] = float(self.oracle_tail[i])
                row["in_band"] = bool(self.in_band[i])
            yield row


def estimate_W1_tail(config: ExperimentConfig, B0star: float | None = None, cycles: int | None = None,
                     levels=None) -> W1TailReport:
    """Empirical tail of the cycle area, its fitted exponent, and the exact tail when available."""
    model = config.model
    n = config.w1_cycles if cycles is None else cycles
    if n < 100_000:
        raise ValueError("the cycle budget must be at least 10^5")
    levels = np.asarray(config.w1_levels if levels is None else levels, dtype=float)
    a = 1.0 / (1.0 + config.p)
    cyc = harvest_cycles(model, n, config.p, config.stream_name("w1"))
    W = np.sort(cyc.W)
    counts = n - np.searchsorted(W, levels, side="left")
    est = fit_tail(levels, counts, n, a)
    B0 = solver_B0star(model, config.p, config.solver_m) if B0star is None else B0star
    report = W1TailReport(est, B0, meta={"cycles": n, "stream": config.stream_name("w1")})
    if config.oracle and model.is_lattice:
        chain = LatticeChain.from_model(model, config.oracle_K)
        near = exact_cycle_law(chain, config.p, levels=levels)
        report.oracle_tail = near.tail
        report.in_band = binomial_band(counts, n, near.tail)
        far = exact_cycle_law(chain, config.p, levels=config.w1_oracle_levels)
        report.oracle_levels = np.asarray(config.w1_oracle_levels)
        report.oracle_far_tail = far.tail
        report.meta["oracle_cap_mass"] = far.cap_mass
    return report


# -- V_n --------------------------------------------------------------------

@dataclass
class VbarTailReport:
    b: np.ndarray
    start: str
    estimates: list  # one TailEstimate per b, levels are n
    meta: dict = field(default_factory=dict)

    @property
    def slopes(self) -> np.ndarray:
        return np.array([e.slope for e in self.estimates])

    def with_prefactor(self) -> list:
        """The same counts refitted with a log n prefactor term, one estimate per b."""
        return [fit_tail(e.levels, e.counts, e.sample_size, e.exponent, log_prefactor=True)
                for e in self.estimates]

    def slope_ratios(self) -> np.ndarray:
        """Slopes relative to the largest b; the limit predicts (b / b_max)^a."""
        s = self.slopes
        return s / s[np.argmax(self.b)]


def estimate_Vbar_tail(config: ExperimentConfig, b_grid=None, start: str | None = None,
                       replications: int | None = None, bn_grid=None) -> VbarTailReport:
    """log P(V_n >= b) across n for each b, fitted against n^a.

    The n grid for b is bn / b, so that every b is probed over the same
    range of b n where the limit scales.
    """
    model = config.model
    start = start or ("zero" if config.start == "both" else config.start)
    b_grid = np.asarray(config.vbar_b if b_grid is None else b_grid, dtype=float)
    bn = np.asarray(config.vbar_bn if bn_grid is None else bn_grid, dtype=float)
    R = config.vbar_replications if replications is None else replications
    if R < 100_000:
        raise ValueError("the replication budget must be at least 10^5 per n")
    if len(bn) < 3:
        raise ValueError("the n grid needs at least 3 values")
    a = 1.0 / (1.0 + config.p)
    estimates = []
    for b in b_grid:
        ns = np.unique(np.maximum(np.round(bn / b), 1).astype(int))
        counts = []
        for n in ns:
            v = sample_Vbar_batch(model, int(n), config.p, R,
                                  config.stream_name(f"vbar/{start}/b={float(b)!r}/n={n}"), start,
                                  config.vbar_warmup)
            counts.append(int(np.count_nonzero(v >= b)))
        estimates.append(fit_tail(ns, counts, R, a))
    return VbarTailReport(b_grid, start, estimates, {"replications": R})


# -- finite-dimensional windows ---------------------------------------------

@dataclass
class FindimReport:
    times: np.ndarray
    thresholds: np.ndarray
    lam: float
    predicted: float
    n: np.ndarray
    counts: np.ndarray
    replications: int
    normalized: np.ndarray  # -log P / n^a
    gaps: np.ndarray  # normalized - predicted
    trend_ok: bool  # normalized values nonincreasing in n


def verify_findim(config: ExperimentConfig, times=None, thresholds=None, B0star: float | None = None,
                  lam: float | None = None) -> FindimReport:
    """Joint exceedances of the window increments of Y_n against the finite-dimensional rate.

    The event is Y_n(t_i) - Y_n(t_(i-1)) >= a_i for every window.  The
    normalized -log P / n^a should approach B0* * sum (a_i - lambda dt_i)_+^a.
    """
    model = config.model
    t = np.asarray(config.findim_times if times is None else times, dtype=float)
    thr = np.asarray(config.findim_thresholds if thresholds is None else thresholds, dtype=float)
    if len(t) > 3:
        raise ValueError("at most 3 windows")
    if lam is None:
        if model.is_lattice:
            pi = stationary(LatticeChain.from_model(model, config.oracle_K)).pi
            lam = float(np.arange(len(pi)) ** config.p @ pi)
        else:
            lam = estimate_lambda(harvest_cycles(model, 1_000_000, config.p, config.stream_name("lambda")))[0]
    B0 = solver_B0star(model, config.p, config.solver_m) if B0star is None else B0star
    ctx = make_context(model, config.p, lam, B0)
    dt = np.diff(np.concatenate([[0.0], t]))
    # the cheapest point of the event puts every increment at max(a_i, lambda dt_i)
    predicted = rate_findim(ctx, t, np.cumsum(np.maximum(thr, lam * dt)))
    a = ctx.alpha
    ns = np.asarray(config.findim_n, dtype=float).astype(int)
    R = config.findim_replications
    counts = []
    for n in ns:
        y = sample_Ybar_batch(model, int(n), config.p, t, R, config.stream_name(f"findim/n={n}"))
        inc = np.diff(np.column_stack([np.zeros(R), y]), axis=1)
        counts.append(int(np.all(inc >= thr[None, :], axis=1).sum()))
    counts = np.array(counts)
    with np.errstate(divide="ignore"):
        normalized = -np.log(counts / R) / ns.astype(float) ** a
    gaps = normalized - predicted
    finite = np.isfinite(normalized)
    if finite.sum() < 2:
        raise InsufficientTail("fewer than two window sizes saw the event")
    # the polynomial prefactor can carry finite-n values past the limit, so
    # only the direction of travel is checked
    trend_ok = bool(np.all(np.diff(normalized[finite]) <= 0))
    return FindimReport(t, thr, lam, predicted, ns, counts, R, normalized, gaps, trend_ok)
