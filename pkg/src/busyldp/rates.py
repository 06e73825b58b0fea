"""Rate-function evaluators for paths, sample paths and finite-dimensional marginals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .models import ConvexConjugate, IncrementModel, tilt_root_beta
from .paths import BVPath, StepDriftPath, hitting_time

__all__ = [
    "RateContext",
    "InsufficientCycles",
    "TruncationUnreached",
    "make_context",
    "pathcost_bv",
    "pathcost_excursion",
    "rate_IY",
    "rate_IZ",
    "rate_Ialpha",
    "rate_IS",
    "rate_findim",
    "rate_IK",
    "estimate_lambda",
]


class InsufficientCycles(ValueError):
    pass


class TruncationUnreached(ValueError):
    pass


@dataclass(frozen=True)
class RateContext:
    """Model, conjugate and the constants (p, lambda, B0*) shared by the evaluators."""

    model: IncrementModel
    conjugate: ConvexConjugate
    p: float = 1.0
    lam: float = 0.0
    B0star: float = 0.0
    alpha: float = field(init=False)

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError("p must be positive")
        if self.lam < 0 or self.B0star < 0:
            raise ValueError("lambda and B0* must be nonnegative")
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "alpha", 1.0 / (1.0 + self.p))

    @property
    def mu(self) -> float:
        return self.model.mu

    @cached_property
    def beta(self) -> float:
        return tilt_root_beta(self.model)

    @property
    def ybar(self) -> float:
        """Start level from which the zero-cost descent at slope mu has unit area."""
        return (abs(self.model.mu) * (self.p + 1.0)) ** (1.0 / (1.0 + self.p))

    def with_values(self, **kw) -> "RateContext":
        args = dict(model=self.model, conjugate=self.conjugate, p=self.p, lam=self.lam, B0star=self.B0star)
        args.update(kw)
        return RateContext(**args)


def make_context(model: IncrementModel, p: float = 1.0, lam: float = 0.0, B0star: float = 0.0,
                 mode: str = "analytic") -> RateContext:
    return RateContext(model, ConvexConjugate(model, mode), p, lam, B0star)


def _jump_cost(theta: float, mass: float) -> float:
    # 0 * inf is taken as 0: a path without jumps pays nothing
    if mass == 0:
        return 0.0
    return abs(theta) * mass


def _slope_cost(ctx: RateContext, segments) -> float:
    if not segments:
        return 0.0
    d = np.array([s[0] for s in segments])
    v = np.array([s[1] for s in segments])
    vals = np.asarray(ctx.conjugate(v), dtype=float)
    if np.any(np.isinf(vals)):
        return math.inf
    return math.fsum((d * vals).tolist())


def pathcost_bv(ctx: RateContext, path: BVPath) -> float:
    """Integral of Lambda*(slope) plus theta_+ per unit up-mass and |theta_-| per unit down-mass."""
    cost = _slope_cost(ctx, path.segments)
    cost += _jump_cost(ctx.model.theta_plus, path.up_mass)
    cost += _jump_cost(ctx.model.theta_minus, path.down_mass)
    return cost


def pathcost_excursion(ctx: RateContext, path: BVPath, y: float) -> float:
    """Path cost accumulated up to the first return of the reflected path to 0."""
    if path.start != y:
        return math.inf
    T = hitting_time(path)
    if math.isinf(T):
        raise TruncationUnreached("the path does not return to 0 within its horizon")
    segs = []
    t0 = 0.0
    for d, s in path.segments:
        if t0 >= T:
            break
        segs.append((min(d, T - t0), s))
        t0 += d
    up = math.fsum(b for t, b in path.ups if t <= T)
    down = math.fsum(b for t, b in path.downs if t <= T)
    return (_slope_cost(ctx, segs) + _jump_cost(ctx.model.theta_plus, up)
            + _jump_cost(ctx.model.theta_minus, down))


def rate_IY(ctx: RateContext, zeta: StepDriftPath) -> float:
    """B0* times the sum of alpha-powers of the jumps on the drift-lambda subspace, +inf off it."""
    if zeta.drift != ctx.lam:
        return math.inf
    return ctx.B0star * math.fsum(b**ctx.alpha for _, b in zeta.jumps)


# the centred process and the unit-constant version share the same formula
rate_IZ = rate_IY


def rate_Ialpha(ctx: RateContext, zeta: StepDriftPath) -> float:
    return rate_IY(ctx.with_values(B0star=1.0), zeta)


def rate_IS(ctx: RateContext, zeta: StepDriftPath) -> float:
    """Rate of a path that is flat except for a single jump at time 1."""
    if zeta.drift != 0.0:
        return math.inf
    if not zeta.jumps:
        return 0.0
    if len(zeta.jumps) > 1 or zeta.jumps[0][0] != 1.0:
        return math.inf
    return ctx.B0star * zeta.jumps[0][1] ** ctx.alpha


def rate_findim(ctx: RateContext, times, values) -> float:
    """Rate of the vector (Y(t_1), ..., Y(t_k)).

    Increments within a few ulps of the drift, on either side, are treated
    as exactly on it, so that values lambda * t_i evaluate to 0.
    """
    t = np.asarray(times, dtype=float)
    x = np.asarray(values, dtype=float)
    if t.ndim != 1 or t.shape != x.shape or len(t) == 0:
        raise ValueError("times and values must be equal-length nonempty lists")
    if np.any(np.diff(t) <= 0) or t[0] < 0 or t[-1] > 1:
        raise ValueError("times must be strictly increasing in [0, 1]")
    dt = np.diff(np.concatenate([[0.0], t]))
    dx = np.diff(np.concatenate([[0.0], x]))
    excess = dx - ctx.lam * dt
    slack = 1e-12 * (1.0 + np.abs(x).max())
    if np.any(excess < -slack):
        return math.inf
    excess = np.where(excess <= slack, 0.0, excess)
    return ctx.B0star * math.fsum((excess**ctx.alpha).tolist())


def rate_IK(ctx: RateContext, path: BVPath) -> float:
    """Sample-path rate of the scaled free random walk on [0, 1]."""
    if path.horizon != 1.0:
        raise ValueError("rate_IK needs a path on [0, 1]")
    if path.start != 0.0:
        return math.inf
    return pathcost_bv(ctx, path)


def _cycle_arrays(cycles):
    if hasattr(cycles, "tau") and hasattr(cycles, "W"):
        return np.asarray(cycles.tau, dtype=float), np.asarray(cycles.W, dtype=float)
    cycles = list(cycles)
    return (np.array([c.tau for c in cycles], dtype=float),
            np.array([c.W for c in cycles], dtype=float))


def estimate_lambda(cycles) -> tuple[float, float]:
    """Ratio estimate sum(W) / sum(tau) with its regenerative standard error."""
    tau, W = _cycle_arrays(cycles)
    n = len(tau)
    if n < 2:
        raise InsufficientCycles(f"need at least 2 cycles, got {n}")
    lam = W.sum() / tau.sum()
    resid = W - lam * tau
    se = math.sqrt(resid.var(ddof=1) / n) / tau.mean()
    return float(lam), float(se)
