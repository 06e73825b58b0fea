"""Grid problems built on the single-level solver: the stationary-start
constant, structural checks over a y-grid, and solution dumps."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..rates import RateContext
from .common import VariationalSolution
from .direct import solve_direct

__all__ = ["BpiResult", "solve_Bpi", "PropertyReport", "property_checks", "dump_solution"]


@dataclass
class BpiResult:
    value: float
    y: float
    table: list = field(default_factory=list)
    # min over the grid of i/k * beta * ybar + B*: an upper bound on the limit
    upper_value: float = math.nan

    def __iter__(self):
        return iter((self.value, self.y))


def solve_Bpi(ctx: RateContext, k: int, m: int = 200, solver=None) -> BpiResult:
    """min over i = 1..k of (i - 1)/k * beta * ybar + B*_{i ybar / k}.

    Grid points whose offset alone already exceeds the best value are
    skipped since B* is nonnegative.  Ties go to the smallest y.
    Unpacks as ``(value, argmin_y)``; ``table`` lists (y, offset, B*_y).
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    solver = solver or (lambda y, hint: solve_direct(ctx, y, m, richardson=False, T_hint=hint))
    beta, ybar = ctx.beta, ctx.ybar
    best = (math.inf, math.nan)
    upper = math.inf
    table = []
    hint = None
    step = beta * ybar / k
    for i in range(1, k + 1):
        offset = (i - 1) * step
        if offset >= best[0] and offset + step >= upper:
            break
        y = i * ybar / k
        sol = solver(y, hint)
        hint = sol.diagnostics.get("grid_horizon", sol.horizon) if sol.value > 0 else hint
        total = offset + sol.value
        table.append((y, offset, sol.value))
        if total < best[0]:
            best = (total, y)
        upper = min(upper, total + step)
    return BpiResult(best[0], best[1], table, upper)


@dataclass
class PropertyReport:
    ygrid: list
    values: list
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def property_checks(ctx: RateContext, ygrid, m: int = 200, mono_tol: float = 1e-6,
                    zero_tol: float = 1e-3, lip_tol: float = 2e-3, values=None) -> PropertyReport:
    """Monotonicity, the Lipschitz bound with constant Lambda*(1), and B*_y = 0 past ybar.

    Each check has its own slack.  ``values`` may carry precomputed B*_y
    for the grid.
    """
    ys = [float(y) for y in ygrid]
    if any(b < a for a, b in zip(ys, ys[1:])):
        raise ValueError("y grid must be sorted")
    if values is None:
        values = []
        hint = None
        for y in ys:
            sol = solve_direct(ctx, y, m, richardson=False, T_hint=hint)
            hint = sol.diagnostics.get("grid_horizon") if sol.value > 0 else hint
            values.append(sol.value)
    lip = float(ctx.conjugate(1.0))
    bad = []
    for i in range(len(ys) - 1):
        if values[i + 1] > values[i] + mono_tol:
            bad.append(("nonincreasing", ys[i], ys[i + 1], values[i + 1] - values[i]))
    for i in range(len(ys)):
        for j in range(i + 1, len(ys)):
            excess = values[i] - values[j] - (ys[j] - ys[i]) * lip
            if excess > lip_tol:
                bad.append(("lipschitz", ys[i], ys[j], excess))
    for y, v in zip(ys, values):
        if y >= ctx.ybar and v > zero_tol:
            bad.append(("zero-past-ybar", y, y, v))
    return PropertyReport(ys, list(values), bad)


def dump_solution(sol: VariationalSolution, csv_path, json_path=None):
    """Write (s, xi(s), slope) rows and a JSON header with the value and residuals."""
    csv_path = Path(csv_path)
    json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
    path = sol.path
    t = 0.0
    x = path.start
    rows = [(0.0, x, path.segments[0][1])]
    for d, s in path.segments:
        t += d
        x += s * d
        rows.append((t, x, s))
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "xi", "slope"])
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
    header = {k: (None if isinstance(v, float) and not math.isfinite(v) else v)
              for k, v in sol.header().items()}
    json_path.write_text(json.dumps(header, indent=2, default=_jsonable))
    return csv_path, json_path


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    return str(obj)
