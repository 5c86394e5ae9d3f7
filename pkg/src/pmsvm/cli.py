"""Command-line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 verification
failure, 3 unreachable privacy budget. All numeric output is plain decimal
text with '.' separators, newline-terminated.
"""

from __future__ import annotations

import argparse
import sys

from .harness import (
    ConfigError,
    accountant_trace,
    curves_csv,
    parse_config,
    run_experiment,
    verify_sensitivity,
)
from .privacy import BudgetUnreachable, PrivacyBudget, calibrate_analytic_gaussian


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; the contract
    reserves 2 for verification failures, so remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_globals(p) -> None:
    # SUPPRESS keeps an unset occurrence from clobbering a value parsed at
    # the other position (before vs after the subcommand).
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                   help="base seed override")
    p.add_argument("--workers", type=int, default=argparse.SUPPRESS,
                   help="parallel cells")
    p.add_argument("--out", default=argparse.SUPPRESS,
                   help="output directory or file")


def _build_parser() -> _Parser:
    p = _Parser(prog="pmsvm", description=__doc__)
    _add_globals(p)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="execute an experiment config")
    run.add_argument("--config", required=True, help="TOML experiment file")

    ver = sub.add_parser(
        "verify-sensitivity",
        help="empirical leave-one-out check of the weight sensitivity bound",
    )
    ver.add_argument("--n", type=int, default=40)
    ver.add_argument("--d", type=int, default=5)
    ver.add_argument("--c", type=int, default=3)
    ver.add_argument("--trials", type=int, default=200)
    ver.add_argument("--cn", type=float, default=0.01, help="slack ratio C/n")
    ver.add_argument("--tol", type=float, default=1e-4)

    cal = sub.add_parser("calibrate", help="exact Gaussian noise scale")
    cal.add_argument("--delta-sens", type=float, required=True)
    cal.add_argument("--eps", type=float, required=True)
    cal.add_argument("--delta", type=float, required=True)

    acc = sub.add_parser("accountant", help="per-step spent epsilon trace")
    acc.add_argument("--q", type=float, required=True)
    acc.add_argument("--sigma", type=float, required=True)
    acc.add_argument("--steps", type=int, required=True)
    acc.add_argument("--delta", type=float, required=True)

    cur = sub.add_parser("curves", help="merge report traces into CSV")
    cur.add_argument("reports", nargs="+", metavar="report")

    for child in (run, ver, cal, acc, cur):
        _add_globals(child)
    return p


def _cmd_run(args) -> int:
    config = parse_config(args.config)
    if args.out is not None:
        config.outdir = args.out
    if args.seed:
        config.base_seed = args.seed
    table = run_experiment(config, workers=max(1, args.workers))
    for row in table.rows:
        mean = "-" if row.mean is None else f"{row.mean:.12g}"
        print(f"{row.dataset} {row.method} eps={row.epsilon:g} "
              f"acc={mean} seeds={len(row.accuracies)} status={row.status}")
    print(f"wrote {config.outdir}/table.csv")
    return 0


def _cmd_verify(args) -> int:
    result = verify_sensitivity(
        n=args.n, d=args.d, c=args.c, trials=args.trials,
        C_over_n=args.cn, tol=args.tol, base_seed=args.seed,
    )
    for line in result["failures"]:
        print(f"solver failure: {line}", file=sys.stderr)
    print(f"trials: {result['trials']}")
    print(f"violations: {result['violations']}")
    print(f"worst ratio: {result['worst_ratio']:.12g}")
    return 2 if result["violations"] else 0


def _cmd_calibrate(args) -> int:
    sigma = calibrate_analytic_gaussian(
        args.delta_sens, PrivacyBudget(args.eps, args.delta)
    )
    print(f"{sigma:.12g}")
    return 0


def _cmd_accountant(args) -> int:
    trace = accountant_trace(args.q, args.sigma, args.steps, args.delta)
    for t, eps in enumerate(trace, start=1):
        print(f"{t} {eps:.12g}")
    final = trace[-1] if trace else 0.0
    print(f"final {final:.12g}")
    return 0


def _cmd_curves(args) -> int:
    if args.out is not None:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            curves_csv(args.reports, fh)
    else:
        curves_csv(args.reports, sys.stdout)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    args.seed = getattr(args, "seed", 0)
    args.workers = getattr(args, "workers", 1)
    args.out = getattr(args, "out", None)
    handler = {
        "run": _cmd_run,
        "verify-sensitivity": _cmd_verify,
        "calibrate": _cmd_calibrate,
        "accountant": _cmd_accountant,
        "curves": _cmd_curves,
    }[args.command]
    try:
        return handler(args)
    except BudgetUnreachable as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
