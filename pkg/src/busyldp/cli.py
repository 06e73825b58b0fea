"""Command-line entry point: ``busyldp <subcommand> [options]``.

Every subcommand writes its numbers to ``--out`` as CSV with a JSON sidecar
of metadata (or a single JSON file with ``--format json``).  Outputs are
pure functions of the configuration and the seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config, parse_grid
from .models import ConvexConjugate, legendre, legendre_grad, validate_assumptions
from .rates import make_context

__all__ = ["main", "build_parser"]


def _model_arg(text: str):
    family, _, params = text.partition(":")
    if not params:
        raise argparse.ArgumentTypeError("expected FAMILY:PARAMS, e.g. two-point:0.3 or gaussian:-1,1")
    return family.strip(), parse_grid(params)


def _grid_arg(text: str):
    try:
        return parse_grid(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--format", choices=("csv", "json"), help="output format (overrides the config)")
    common.add_argument("--model", type=_model_arg, help="increment law as FAMILY:PARAMS")
    common.add_argument("--p", type=float, help="power of the area functional")

    parser = argparse.ArgumentParser(prog="busyldp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("conjugate", parents=[common], help="tabulate the convex conjugate")
    s.add_argument("--v", type=_grid_arg, help="evaluation points (list or lin/geom grid)")
    s.add_argument("--mode", choices=("analytic", "numeric", "both"), default="both")

    s = sub.add_parser("rate", parents=[common], help="minimal excursion cost B_y* and B_pi*")
    s.add_argument("--y", type=_grid_arg, default=(0.0,), help="start levels")
    s.add_argument("--method", choices=("direct", "shooting"), default="direct")
    s.add_argument("--m", type=int, help="slope cells for the direct solver")
    s.add_argument("--level", type=float, default=1.0, help="required area")
    s.add_argument("--bpi", type=int, metavar="K", help="also compute B_pi* on a K-point grid")
    s.add_argument("--dump", action="store_true", help="write the optimal path for every y")

    s = sub.add_parser("simulate", parents=[common], help="simulate the chain, its cycles or scaled paths")
    s.add_argument("--kind", choices=("cycles", "paths", "chain"), default="cycles")
    s.add_argument("--count", type=int, default=100_000, help="cycles to harvest")
    s.add_argument("--n", type=int, default=1000, help="horizon for paths and chain")
    s.add_argument("--grid", type=_grid_arg, default=tuple(np.linspace(0, 1, 11).tolist()))
    s.add_argument("--replications", type=int, default=10)

    s = sub.add_parser("tail-w1", parents=[common], help="tail of the cycle area and its exponent")
    s.add_argument("--cycles", type=int, help="cycle budget (overrides the config)")

    s = sub.add_parser("tail-vbar", parents=[common], help="tail of the last-cycle area across n")
    s.add_argument("--b", type=_grid_arg, help="thresholds (overrides the config)")
    s.add_argument("--start", choices=("zero", "warmed", "both"))
    s.add_argument("--replications", type=int)

    s = sub.add_parser("findim", parents=[common], help="joint window exceedances against the finite-dimensional rate")
    s.add_argument("--times", type=_grid_arg)
    s.add_argument("--thresholds", type=_grid_arg)

    s = sub.add_parser("oracle", parents=[common], help="exact stationary law, cycle law and duality checks")
    s.add_argument("--K", type=int, help="state cap (overrides the config)")
    s.add_argument("--levels", type=_grid_arg, help="area levels for P(W_1 >= t)")
    s.add_argument("--duality-n", type=int, default=12)
    s.add_argument("--duality-b", type=float, default=3.0)

    s = sub.add_parser("verify", parents=[common], help="run the acceptance suite")
    s.add_argument("--only", type=_grid_arg, help="criterion numbers to run")
    return parser


def _config_from(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {"seed": args.seed, "out": args.out, "format": args.format, "p": args.p}
    if args.model:
        over["family"], over["params"] = args.model
    return cfg.with_overrides(**over)


class _Writer:
    def __init__(self, cfg: ExperimentConfig, command: str):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.base = {
            "command": command,
            "version": __version__,
            "config_sha256": cfg.digest(),
            "seed": cfg.seed,
            "model": {"family": cfg.family, "params": list(cfg.params)},
            "p": cfg.p,
        }

    def emit(self, name: str, rows: list, meta: dict | None = None) -> list:
        meta = _jsonable({**self.base, **(meta or {})})
        if self.cfg.format == "json":
            path = self.out / f"{name}.json"
            path.write_text(json.dumps({"meta": meta, "rows": _jsonable(rows)}, indent=2))
            return [path]
        path = self.out / f"{name}.csv"
        with open(path, "w", newline="") as fh:
            if rows:
                w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
                w.writeheader()
                for r in rows:
                    w.writerow({k: _cell(v) for k, v in r.items()})
        side = self.out / f"{name}.json"
        side.write_text(json.dumps(meta, indent=2))
        return [path, side]


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _cmd_conjugate(args, cfg, out):
    model = cfg.model
    lo, hi = model.support_range()
    if args.v:
        v = np.asarray(args.v, dtype=float)
    else:
        a = lo if math.isfinite(lo) else model.mu - 4.0
        b = hi if math.isfinite(hi) else model.mu + 4.0
        v = np.linspace(a, b, 201)
    rows = []
    modes = ("analytic", "numeric") if args.mode == "both" else (args.mode,)
    vals = {m: legendre(ConvexConjugate(model, m), v) for m in modes}
    grads = {m: legendre_grad(ConvexConjugate(model, m), v) for m in modes}
    for i, x in enumerate(v):
        row = {"v": float(x)}
        for m in modes:
            row[m] = float(vals[m][i])
            row[f"{m}_grad"] = float(grads[m][i])
        rows.append(row)
    meta = {"mu": model.mu, "theta_minus": model.theta_minus, "theta_plus": model.theta_plus}
    if args.mode == "both":
        fin = np.isfinite(vals["analytic"]) & np.isfinite(vals["numeric"])
        meta["max_abs_difference"] = float(np.max(np.abs(vals["analytic"] - vals["numeric"])[fin]))
    return out.emit("conjugate", rows, meta)


def _cmd_rate(args, cfg, out):
    from .variational import dump_solution, solve_Bpi, solve_direct, solve_shooting

    ctx = make_context(cfg.model, cfg.p)
    m = args.m or cfg.solver_m
    rows = []
    files = []
    for y in args.y:
        if args.method == "direct":
            sol = solve_direct(ctx, float(y), m, level=args.level)
        else:
            sol = solve_shooting(ctx, float(y), level=args.level, allow_nonsmooth=True)
        rows.append({"y": float(y), "value": sol.value, "T": sol.horizon, "method": sol.method,
                     "constraint_residual": sol.diagnostics.get("constraint_residual", float("nan"))})
        if args.dump:
            files += dump_solution(sol, Path(cfg.out) / f"path_y={float(y):g}.csv")
    meta = {"ybar": ctx.ybar, "beta": ctx.beta, "m": m, "level": args.level}
    if args.bpi:
        res = solve_Bpi(ctx, args.bpi, m=min(m, 200))
        meta["Bpi"] = {"k": args.bpi, "value": res.value, "argmin_y": res.y, "upper_value": res.upper_value}
    return out.emit("rate", rows, meta) + files


def _cmd_simulate(args, cfg, out):
    from .sim import harvest_cycles, sample_paths, simulate_chain

    model = cfg.model
    if args.kind == "cycles":
        cyc = harvest_cycles(model, args.count, cfg.p, cfg.stream_name("simulate/cycles"))
        rows = [{"tau": int(t), "W": float(w), "peak": float(k)} for t, w, k in zip(cyc.tau, cyc.W, cyc.peak)]
        return out.emit("cycles", rows, {"count": args.count, "mean_tau": float(cyc.tau.mean())})
    if args.kind == "chain":
        x = simulate_chain(model, args.n, cfg.stream_name("simulate/chain"))
        return out.emit("chain", [{"k": k, "X": float(v)} for k, v in enumerate(x)], {"n": args.n})
    samples = sample_paths(model, args.n, cfg.p, args.grid, args.replications, cfg.stream_name("simulate/paths"))
    rows = [{"replication": r, "t": float(t), "Ybar": float(a), "Zbar": float(b)}
            for r, s in enumerate(samples) for t, a, b in zip(s.grid, s.Ybar, s.Zbar)]
    meta = {"n": args.n, "Vbar": [s.Vbar for s in samples], "N": [s.N for s in samples]}
    return out.emit("paths", rows, meta)


def _cmd_tail_w1(args, cfg, out):
    from .verify import estimate_W1_tail

    rep = estimate_W1_tail(cfg, cycles=args.cycles)
    meta = {"fit": rep.estimate.summary(), "B0star": rep.B0star, **rep.meta}
    files = out.emit("tail_w1", list(rep.rows()), meta)
    if rep.oracle_far_tail is not None:
        slopes = rep.oracle_slopes
        rows = [{"t": float(t), "tail": float(p), "local_slope": float(s) if i else float("nan")}
                for i, (t, p, s) in enumerate(zip(rep.oracle_levels, rep.oracle_far_tail,
                                                  np.concatenate([[np.nan], slopes])))]
        files += out.emit("tail_w1_oracle", rows, {"B0star": rep.B0star})
    return files


def _cmd_tail_vbar(args, cfg, out):
    from .verify import estimate_Vbar_tail

    starts = ("zero", "warmed") if (args.start or cfg.start) == "both" else (args.start or cfg.start,)
    rows = []
    fits = {}
    for start in starts:
        rep = estimate_Vbar_tail(cfg, args.b, start, args.replications)
        for b, est in zip(rep.b, rep.estimates):
            fits[f"{start}/b={float(b)!r}"] = est.summary()
            for r in est.rows():
                rows.append({"start": start, "b": float(b), "n": int(r["t"]), **{k: r[k] for k in
                             ("x", "count", "log_prob", "se", "used")}})
        fits[f"{start}/ratios"] = rep.slope_ratios().tolist()
    return out.emit("tail_vbar", rows, {"fits": fits})


def _cmd_findim(args, cfg, out):
    from .verify import verify_findim

    rep = verify_findim(cfg, args.times, args.thresholds)
    rows = [{"n": int(n), "count": int(c), "normalized": float(v), "predicted": rep.predicted, "gap": float(g)}
            for n, c, v, g in zip(rep.n, rep.counts, rep.normalized, rep.gaps)]
    meta = {"times": rep.times, "thresholds": rep.thresholds, "lambda": rep.lam,
            "replications": rep.replications, "trend_ok": rep.trend_ok}
    return out.emit("findim", rows, meta)


def _cmd_oracle(args, cfg, out):
    from .oracle import LatticeChain, duality_check, exact_cycle_law, stationary

    K = args.K or cfg.oracle_K
    chain = LatticeChain.from_model(cfg.model, K)
    law = stationary(chain)
    levels = args.levels or cfg.w1_levels
    cyc = exact_cycle_law(chain, cfg.p, levels=levels)
    dual = duality_check(chain, args.duality_n, args.duality_b, cfg.p)
    meta = {
        "K": K,
        "residual": law.residual,
        "leak": law.leak,
        "stationary_mean": law.mean,
        "mean_tau": cyc.mean_tau,
        "kac_gap": abs(cyc.mean_tau * law.pi[0] - 1),
        "tau_truncation": cyc.tau_truncation,
        "duality": {"n": args.duality_n, "b": args.duality_b, "lhs": dual.lhs, "rhs": dual.rhs,
                    "gap": dual.gap, "mode": dual.mode},
    }
    files = out.emit("stationary", [{"x": x, "pi": float(v)} for x, v in enumerate(law.pi)], meta)
    files += out.emit("w1_tail_exact", [{"t": float(t), "P(W1>=t)": float(p)} for t, p in zip(levels, cyc.tail)],
                      {"K": K, "cap_mass": cyc.cap_mass})
    return files


def _cmd_verify(args, cfg, out):
    from .acceptance import run_acceptance

    only = [int(k) for k in args.only] if args.only else None
    rep = run_acceptance(cfg, only, echo=print)
    rep.write(cfg.out)
    return rep.exit_code


_COMMANDS = {
    "conjugate": _cmd_conjugate,
    "rate": _cmd_rate,
    "simulate": _cmd_simulate,
    "tail-w1": _cmd_tail_w1,
    "tail-vbar": _cmd_tail_vbar,
    "findim": _cmd_findim,
    "oracle": _cmd_oracle,
    "verify": _cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from(args)
        report = validate_assumptions(cfg.model)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"busyldp: {exc}", file=sys.stderr)
        return 2
    if not report.ok:
        print(f"busyldp: model fails {', '.join(report.failures())}\n{report}", file=sys.stderr)
        return 2
    out = _Writer(cfg, args.command)
    result = _COMMANDS[args.command](args, cfg, out)
    if isinstance(result, int):
        return result
    for path in result:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
