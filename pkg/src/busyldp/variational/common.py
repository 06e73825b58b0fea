"""Shared types, the horizon bound, and fast conjugate evaluation for the solvers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from ..models import legendre, legendre_grad
from ..paths import BVPath
from ..rates import RateContext

__all__ = [
    "InfeasibleGrid",
    "NonReturn",
    "HorizonBound",
    "VariationalSolution",
    "horizon_bound",
    "ConjugateTable",
]


class InfeasibleGrid(RuntimeError):
    pass


class NonReturn(RuntimeError):
    pass


@dataclass(frozen=True)
class HorizonBound:
    y: float
    w: float
    z: float
    M: float


@dataclass
class VariationalSolution:
    """Optimal value and path for one start level y."""

    y: float
    value: float
    method: str
    horizon: float
    path: BVPath
    z: float | None = None
    ell: float | None = None
    level: float = 1.0
    diagnostics: dict = field(default_factory=dict)

    def header(self) -> dict:
        out = {
            "y": self.y,
            "value": self.value,
            "method": self.method,
            "T": self.horizon,
            "z": self.z,
            "ell": self.ell,
            "level": self.level,
        }
        out.update({k: v for k, v in self.diagnostics.items() if np.isscalar(v) or v is None})
        return out


def _solve_for_z(ctx: RateContext, target: float) -> float | None:
    """Point z > -mu with Lambda*(z) = target, or None when Lambda* stays below it."""
    conj = ctx.conjugate
    lo = -ctx.mu
    hi = ctx.model.support_range()[1]
    if math.isinf(hi):
        hi = lo + 1.0
        while conj(hi) < target:
            hi = lo + 2.0 * (hi - lo)
    elif conj(hi) < target:
        return None
    if conj(hi) == math.inf:
        # the conjugate jumps to +inf past the support edge; stay inside it
        hi = np.nextafter(hi, -math.inf)
        if conj(hi) < target:
            return None
    return brentq(lambda v: conj(v) - target, lo, hi, xtol=1e-14, rtol=1e-14)


def horizon_bound(ctx: RateContext, y: float) -> HorizonBound:
    """Horizon beyond which lengthening the time window cannot lower the cost.

    Uses w = mu / 2 and the z > -mu with Lambda*(z) = 2 Lambda*(-mu), falling
    back to z = |mu| when no such point exists.
    """
    mu = ctx.mu
    ybar = ctx.ybar
    w = mu / 2.0
    if y >= ybar:
        return HorizonBound(float(y), w, abs(mu), -y / mu)
    conj = ctx.conjugate
    z = _solve_for_z(ctx, 2.0 * conj(-mu))
    if z is None or not math.isfinite(conj(z)):
        z = abs(mu)
    lz = conj(z)
    lw = conj(w)
    tp = ctx.model.theta_plus
    gap = ybar - y
    t1 = gap * lz / (z * lw)
    t2 = gap / z - ybar / mu
    t3 = (y + (0.0 if math.isinf(tp) else gap * lz / (z * tp))) / (-w)
    return HorizonBound(float(y), w, float(z), float(max(t1, t2, t3)))


class ConjugateTable:
    """Vectorized Lambda* and its gradient on [lo, hi].

    Families with a closed form are evaluated directly; the others go
    through a cubic spline of the numeric conjugate on a dense grid.
    """

    def __init__(self, ctx: RateContext, lo: float, hi: float, nodes: int = 4001):
        self.conj = ctx.conjugate
        self.lo = lo
        self.hi = hi
        self.exact = self.conj.uses_closed_form
        if not self.exact:
            # cluster nodes near the edges where the conjugate bends sharply
            s = 0.5 - 0.5 * np.cos(np.linspace(0.0, math.pi, nodes))
            grid = lo + (hi - lo) * s
            vals = np.asarray(legendre(self.conj, grid), dtype=float)
            grads = np.asarray(legendre_grad(self.conj, grid), dtype=float)
            self._spline = CubicSpline(grid, vals, bc_type=((1, grads[0]), (1, grads[-1])))

    def value(self, v):
        if self.exact:
            return legendre(self.conj, v)
        return self._spline(v)

    def grad(self, v):
        if self.exact:
            return legendre_grad(self.conj, v)
        return self._spline(v, 1)
