"""Command-line entry point ``etkf-lab``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import bounds
from .config import RunConfig, resolve_constants
from .errors import EtkfError, ReplicateFailure
from .harness import (
    check_uniform_bound,
    check_wellposedness,
    export_trace,
    run_filter,
    run_monte_carlo,
    trace_bounds,
)
from .identities import verify_identities

log = logging.getLogger("etkf_lab")


def _cmd_run(args) -> int:
    cfg = RunConfig.from_json(args.config)
    constants = resolve_constants(cfg)
    trace = run_filter(cfg, args.replicate, constants)
    wp, ut = trace_bounds(cfg, trace, constants)
    export_trace(trace, args.out, wp, ut)
    if trace.failed:
        print(f"run aborted: {trace.failure}", file=sys.stderr)
        return 1
    print(f"wrote {trace.steps_completed} steps to {args.out}")
    return 0


def _cmd_montecarlo(args) -> int:
    cfg = RunConfig.from_json(args.config)
    if args.replicates is not None:
        cfg = cfg.with_(replicates=args.replicates)
    constants = resolve_constants(cfg)
    try:
        summary = run_monte_carlo(cfg, threads=args.threads, constants=constants)
    except ReplicateFailure as exc:
        print(str(exc), file=sys.stderr)
        for rid, msg in exc.failed[:10]:
            print(f"  replicate {rid}: {msg}", file=sys.stderr)
        return 1
    wp, ut = trace_bounds(cfg, summary, constants)
    export_trace(summary, args.out, wp, ut)
    print(f"wrote {summary.J} steps over {summary.replicates} replicates to {args.out}")
    if args.check and cfg.fully_observed:
        reports = []
        if constants.alpha == 1.0:
            reports.append(check_wellposedness(cfg, summary, constants))
        if cfg.ensemble_size - 1 >= cfg.m and constants.lambda0:
            reports.append(check_uniform_bound(cfg, summary, constants))
        for r in reports:
            print(r.text())
    return 0


def _cmd_bounds(args) -> int:
    cfg = RunConfig.from_json(args.config)
    constants = resolve_constants(cfg)
    p_wp = constants.params(cfg, one_sided=True)
    p_u = constants.params(cfg)
    consts = bounds.derive_constants(p_u)
    rows = bounds.bound_table(cfg.cycles, args.E0_sq, args.e0_sq, p_wp, p_u)
    bounds.write_bound_table(rows, args.out)
    print(f"alpha={p_u.alpha:.6g} alpha0={consts.alpha0:.6g} theta={consts.theta:.6g} lambda*={consts.lambda_star}")
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _cmd_verify(args) -> int:
    report = verify_identities(args.seed, args.trials)
    print("\n".join(report.lines()))
    return 0 if report.passed else 1


def _cmd_scaling(args) -> int:
    cfg = RunConfig.from_json(args.config)
    constants = resolve_constants(cfg)
    p = constants.params(cfg)
    gammas = [float(g) for g in args.gammas.split(",") if g.strip()]
    slope = bounds.gamma_scaling_exponent(p, gammas)
    for g in sorted(set(gammas)):
        pg = p.with_(gamma=g)
        print(f"gamma={g:.6g} asymptotic_bound={bounds.asymptotic_bound(pg, bounds.derive_constants(pg)):.6g}")
    print(f"log-log slope {slope:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="etkf-lab", description="ETKF twin experiments and error bounds")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="single replicate trace")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--replicate", type=int, default=0)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("montecarlo", help="replicate-averaged summary table")
    p.add_argument("--config", required=True)
    p.add_argument("--replicates", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int)
    p.add_argument("--check", action="store_true", help="also evaluate the bound checks that apply")
    p.set_defaults(func=_cmd_montecarlo)

    p = sub.add_parser("bounds", help="bound tables, no simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--E0-sq", dest="E0_sq", type=float, default=1.0, help="initial mean squared ensemble error")
    p.add_argument("--e0-sq", dest="e0_sq", type=float, default=1.0, help="initial squared mean error")
    p.set_defaults(func=_cmd_bounds)

    p = sub.add_parser("verify", help="randomized identity battery")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("scaling", help="slope of the asymptotic bound against gamma")
    p.add_argument("--config", required=True)
    p.add_argument("--gammas", required=True)
    p.set_defaults(func=_cmd_scaling)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (EtkfError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
