"""Simulation of the Lindley chain X_{k+1} = max(X_k + U_{k+1}, 0) from X_0 = 0,
its regeneration cycles, and the scaled area processes.

Zeros are exact because the recursion clips with max(., 0.0), so cycles are
cut at exact returns to 0 for every increment law.  Wherever a ``stream``
is accepted, an ndarray of increments may be passed instead to force the
trajectory.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .models import IncrementModel, sample_increments
from .paths import m1p_distance, step_graph
from .rng import as_generator, make_stream

__all__ = [
    "CycleRecord",
    "Cycles",
    "ScaledProcessSample",
    "simulate_chain",
    "chain_mean",
    "harvest_cycles",
    "warmup_length",
    "sample_Vbar",
    "sample_Vbar_batch",
    "sample_paths",
    "sample_Ybar_batch",
    "scaled_graphs",
    "exp_equivalence_distances",
    "write_cycles_csv",
    "write_paths_csv",
]

_CHUNK = 1 << 20
VBAR_BLOCK = 4096


@dataclass(frozen=True)
class CycleRecord:
    tau: int
    W: float
    peak: float


@dataclass
class Cycles:
    """Column store of completed cycles."""

    tau: np.ndarray
    W: np.ndarray
    peak: np.ndarray

    def __len__(self):
        return len(self.tau)

    def __getitem__(self, i):
        return CycleRecord(int(self.tau[i]), float(self.W[i]), float(self.peak[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


@dataclass
class ScaledProcessSample:
    n: int
    grid: np.ndarray
    Ybar: np.ndarray
    Zbar: np.ndarray
    Vbar: float
    N: int

    @property
    def Sbar_jump(self) -> float:
        return self.Vbar


def _forced(stream):
    return isinstance(stream, np.ndarray) or isinstance(stream, list)


def _increment_chunks(model, total, stream, chunk=_CHUNK):
    if _forced(stream):
        u = np.asarray(stream, dtype=float)
        if total is not None and len(u) < total:
            raise ValueError(f"forced increments provide {len(u)} steps, {total} needed")
        yield u if total is None else u[:total]
        return
    rng = as_generator(stream)
    left = total
    while left is None or left > 0:
        k = chunk if left is None else min(chunk, left)
        yield sample_increments(model, k, rng)
        if left is not None:
            left -= k


# -- kernels --------------------------------------------------------------

@numba.njit(cache=True)
def _lindley(x0, u, out):
    x = x0
    out[0] = x
    for i in range(u.shape[0]):
        x = x + u[i]
        if x < 0.0:
            x = 0.0
        out[i + 1] = x
    return x


@numba.njit(cache=True)
def _sum_and_last(x0, u):
    x = x0
    s = 0.0
    for i in range(u.shape[0]):
        x = x + u[i]
        if x < 0.0:
            x = 0.0
        s += x
    return x, s


@numba.njit(cache=True)
def _harvest(u, state, p, taus, Ws, peaks, filled, target):
    x, tau, w, peak = state[0], state[1], state[2], state[3]
    k = filled
    for i in range(u.shape[0]):
        if k >= target:
            break
        x = x + u[i]
        if x < 0.0:
            x = 0.0
        tau += 1.0
        if x > 0.0:
            w += x**p
            if x > peak:
                peak = x
        else:
            taus[k] = tau
            Ws[k] = w
            peaks[k] = peak
            k += 1
            tau = 0.0
            w = 0.0
            peak = 0.0
    state[0], state[1], state[2], state[3] = x, tau, w, peak
    return k


@numba.njit(cache=True)
def _vbar_rows(u, warm, p, out):
    n = u.shape[1] - warm
    for r in range(u.shape[0]):
        x = 0.0
        for i in range(warm):
            x = x + u[r, i]
            if x < 0.0:
                x = 0.0
        s = 0.0
        for i in range(warm, warm + n):
            x = x + u[r, i]
            if x < 0.0:
                x = 0.0
            if x > 0.0:
                s += x**p
            else:
                s = 0.0
        out[r] = s / n


# -- public API -----------------------------------------------------------

def simulate_chain(model: IncrementModel, n: int, stream=None) -> np.ndarray:
    """Trajectory X_0, ..., X_n with X_0 = 0."""
    if n < 1:
        raise ValueError("n must be at least 1")
    out = np.empty(n + 1)
    x = 0.0
    pos = 0
    for u in _increment_chunks(model, n, stream):
        seg = np.empty(len(u) + 1)
        x = _lindley(x, u, seg)
        out[pos:pos + len(u) + 1] = seg
        pos += len(u)
    return out


def chain_mean(model: IncrementModel, n: int, stream=None) -> tuple[float, float]:
    """Streaming mean of X_1..X_n and the terminal state, without storing the path."""
    x = 0.0
    total = 0.0
    for u in _increment_chunks(model, n, stream):
        x, s = _sum_and_last(x, u)
        total += s
    return total / n, x


def harvest_cycles(model: IncrementModel, count: int, p: float = 1.0, stream=None,
                   chunk: int = _CHUNK) -> Cycles:
    """Exactly ``count`` completed cycles (tau, W = sum of X^p, peak) from X_0 = 0."""
    if count < 1:
        raise ValueError("count must be at least 1")
    taus = np.empty(count)
    Ws = np.empty(count)
    peaks = np.empty(count)
    state = np.zeros(4)
    filled = 0
    for u in _increment_chunks(model, None, stream, chunk):
        filled = _harvest(u, state, float(p), taus, Ws, peaks, filled, count)
        if filled >= count:
            break
    if filled < count:
        raise ValueError(f"forced increments completed only {filled} of {count} cycles")
    return Cycles(taus.astype(np.int64), Ws, peaks)


_warmup_cache: dict = {}


def warmup_length(model: IncrementModel, pilot_cycles: int = 20000) -> int:
    """Burn-in of 50 mean cycle lengths, with the mean from a fixed pilot run."""
    key = (model.family, model.params)
    if key not in _warmup_cache:
        cyc = harvest_cycles(model, pilot_cycles, 1.0, make_stream("warmup-pilot", 0))
        _warmup_cache[key] = int(math.ceil(50.0 * cyc.tau.mean()))
    return _warmup_cache[key]


def sample_Vbar(model: IncrementModel, n: int, p: float = 1.0, stream=None, start: str = "zero",
                warmup: int | None = None) -> float:
    """One draw of the area since the last return to 0 within a window of n steps, over n."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if start not in ("zero", "warmed"):
        raise ValueError("start must be 'zero' or 'warmed'")
    warm = 0 if start == "zero" else (warmup_length(model) if warmup is None else int(warmup))
    if _forced(stream):
        u = np.asarray(stream, dtype=float)[: warm + n]
        if len(u) < warm + n:
            raise ValueError("forced increments are shorter than the window")
    else:
        u = sample_increments(model, warm + n, as_generator(stream))
    out = np.empty(1)
    _vbar_rows(u.reshape(1, -1), warm, float(p), out)
    return float(out[0])


def sample_Vbar_batch(model: IncrementModel, n: int, p: float, replications: int,
                      experiment="vbar", start: str = "zero", warmup: int | None = None) -> np.ndarray:
    """Independent draws of V_n.

    Replications are grouped in blocks of ``VBAR_BLOCK``; block b uses the
    stream (experiment, b), so any prefix of the output is reproducible.
    """
    if start not in ("zero", "warmed"):
        raise ValueError("start must be 'zero' or 'warmed'")
    warm = 0 if start == "zero" else (warmup_length(model) if warmup is None else int(warmup))
    out = np.empty(replications)
    width = warm + n
    rows_per_chunk = max(1, min(VBAR_BLOCK, _CHUNK // max(width, 1)))
    for b in range(0, (replications + VBAR_BLOCK - 1) // VBAR_BLOCK):
        rng = make_stream(experiment, b)
        lo = b * VBAR_BLOCK
        hi = min(replications, lo + VBAR_BLOCK)
        for r0 in range(lo, hi, rows_per_chunk):
            r1 = min(hi, r0 + rows_per_chunk)
            u = sample_increments(model, (r1 - r0) * width, rng).reshape(r1 - r0, width)
            _vbar_rows(u, warm, float(p), out[r0:r1])
    return out


@numba.njit(cache=True)
def _window_rows(u, p, stops, out):
    for r in range(u.shape[0]):
        x = 0.0
        s = 0.0
        j = 0
        for i in range(u.shape[1]):
            x = x + u[r, i]
            if x < 0.0:
                x = 0.0
            if x > 0.0:
                s += x**p
            while j < stops.shape[0] and stops[j] == i + 1:
                out[r, j] = s
                j += 1
        while j < stops.shape[0]:
            out[r, j] = s
            j += 1


def sample_Ybar_batch(model: IncrementModel, n: int, p: float, times, replications: int,
                      experiment="ybar") -> np.ndarray:
    """Independent draws of (Y_n(t_1), ..., Y_n(t_k)), one row per replication.

    Blocks of ``VBAR_BLOCK`` replications share the stream (experiment, block).
    """
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0) or times[0] < 0 or times[-1] > 1:
        raise ValueError("times must be strictly increasing in [0, 1]")
    stops = np.floor(n * times + 1e-9).astype(np.int64)
    width = int(stops[-1])
    out = np.zeros((replications, len(times)))
    if width == 0:
        return out
    rows_per_chunk = max(1, min(VBAR_BLOCK, _CHUNK // width))
    for b in range(0, (replications + VBAR_BLOCK - 1) // VBAR_BLOCK):
        rng = make_stream(experiment, b)
        lo = b * VBAR_BLOCK
        hi = min(replications, lo + VBAR_BLOCK)
        for r0 in range(lo, hi, rows_per_chunk):
            r1 = min(hi, r0 + rows_per_chunk)
            u = sample_increments(model, (r1 - r0) * width, rng).reshape(r1 - r0, width)
            _window_rows(u, float(p), stops, out[r0:r1])
    return out / n


def _path_arrays(model, n, p, stream):
    x = simulate_chain(model, n, stream)[1:]
    f = np.where(x > 0, x, 0.0) ** p
    S = np.concatenate([[0.0], np.cumsum(f)])
    zero = np.concatenate([[True], x == 0.0])
    # index of the last zero at or before each step (T_{N(k)})
    last = np.maximum.accumulate(np.where(zero, np.arange(n + 1), 0))
    return x, f, S, last


def sample_paths(model: IncrementModel, n: int, p: float = 1.0, grid=(1.0,), replications: int = 1,
                 experiment="paths") -> list:
    """Y_n and Z_n on ``grid``, V_n and N(n) for each replication.

    Replication r uses the stream (experiment, r).
    """
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) < 0) or grid.min() < 0 or grid.max() > 1:
        raise ValueError("grid must be sorted in [0, 1]")
    out = []
    for r in range(replications):
        stream = experiment if _forced(experiment) else make_stream(experiment, r)
        x, f, S, last = _path_arrays(model, n, p, stream)
        k = np.floor(n * grid + 1e-9).astype(int)
        Y = S[k] / n
        Z = S[last[k]] / n
        V = (S[n] - S[last[n]]) / n
        N = int(np.count_nonzero(x == 0.0))
        out.append(ScaledProcessSample(n, grid.copy(), Y, Z, float(V), N))
    return out


def scaled_graphs(model: IncrementModel, n: int, p: float, stream, mesh: float = 1e-3):
    """Completed graphs of Y_n and of Z_n + S_n (the last-cycle area moved to t = 1)."""
    x, f, S, last = _path_arrays(model, n, p, stream)
    times = np.arange(1, n + 1) / n
    gy = step_graph(times, f / n, mesh)
    ends = np.nonzero(x == 0.0)[0] + 1
    W = S[ends] - S[np.concatenate([[0], ends[:-1]])]
    V = S[n] - S[last[n]]
    zt = np.concatenate([ends / n, [1.0]])
    zs = np.concatenate([W, [V]]) / n
    gz = step_graph(zt, zs, mesh)
    return gy, gz


def exp_equivalence_distances(model: IncrementModel, n: int, p: float = 1.0, replications: int = 20,
                              experiment="expeq", mesh: float | None = None) -> np.ndarray:
    """M1' distances between Y_n and Z_n + S_n over independent replications.

    Replication r at size n uses the stream ("<experiment>/n=<n>", r).  The
    default mesh min(1e-3, 10 / n) keeps the graph resolution well below the
    typical distance, which shrinks like 1 / n.
    """
    mesh = min(1e-3, 10.0 / n) if mesh is None else mesh
    d = np.empty(replications)
    for r in range(replications):
        gy, gz = scaled_graphs(model, n, p, make_stream(f"{experiment}/n={n}", r), mesh)
        d[r] = m1p_distance(gy, gz).value
    return d


def write_cycles_csv(cycles: Cycles, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "W", "peak"])
        for t, a, b in zip(cycles.tau.tolist(), cycles.W.tolist(), cycles.peak.tolist()):
            w.writerow([t, repr(a), repr(b)])
    return path


def write_paths_csv(samples, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replication", "t", "Ybar", "Zbar"])
        for r, s in enumerate(samples):
            for t, y, z in zip(s.grid.tolist(), s.Ybar.tolist(), s.Zbar.tolist()):
                w.writerow([r, repr(t), repr(y), repr(z)])
    return path
