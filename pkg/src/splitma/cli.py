"""Command-line entry points.

Exit codes: 0 all checks pass, 1 monitor/assertion violation,
2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import _backend
from .config import parse_config
from .errors import (
    AdmissibilityLost,
    ConfigurationError,
    NumericalFailure,
    SplitmaError,
)
from .experiments import (
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    cmd_beta_sweep,
    cmd_check_identities,
    cmd_flow_run,
    cmd_kahler_converge,
    cmd_oracle_2d,
)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--out", default=None, help="output directory override")
    p.add_argument("--seed", type=int, default=None, help="seed override")
    p.add_argument(
        "--deterministic", action="store_true",
        help="single-worker transforms (the default; kept for scripts)",
    )
    p.add_argument(
        "--parallel", type=int, default=0, metavar="N",
        help="dispatch transforms over N workers (results agree with "
             "deterministic mode to rounding)",
    )


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="splitma",
        description="pseudo-spectral solver and verification lab for the "
                    "parabolic split-type flow on product tori",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="monitored flow run")
    _add_common(p)
    p.add_argument(
        "--negative-control", default=None, metavar="CHECK",
        help="corrupt the trajectory so the named check must fail",
    )

    p = sub.add_parser("kahler-converge",
                       help="steady-state convergence on a product background")
    _add_common(p)

    p = sub.add_parser("beta-sweep", help="exponent-ratio sweep")
    _add_common(p)
    p.add_argument("--betas", required=True,
                   help="comma-separated ratios, e.g. 0.9,0.95,0.99")

    p = sub.add_parser("oracle-2d", help="decoupled factor-flow cross-check")
    _add_common(p)

    p = sub.add_parser("check-identities", help="slice identity suite")
    _add_common(p)
    p.add_argument("--tamper", action="store_true",
                   help=argparse.SUPPRESS)  # negative-control build flag

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.parallel:
        _backend.set_workers(args.parallel)
    if args.deterministic:
        _backend.set_workers(1)
    try:
        cfg = parse_config(args.config)
        out = args.out or cfg.out_dir
        if args.command == "run":
            code, report = cmd_flow_run(
                cfg, out, seed=args.seed,
                negative_control=args.negative_control,
            )
        elif args.command == "kahler-converge":
            code, report = cmd_kahler_converge(cfg, out, seed=args.seed)
        elif args.command == "beta-sweep":
            betas = [float(b) for b in args.betas.replace(",", " ").split()]
            code, report = cmd_beta_sweep(cfg, betas, out, seed=args.seed)
        elif args.command == "oracle-2d":
            code, report = cmd_oracle_2d(cfg, out, seed=args.seed)
        elif args.command == "check-identities":
            code, report = cmd_check_identities(cfg, out, tamper=args.tamper)
        else:  # pragma: no cover
            raise ConfigurationError(f"unknown command {args.command!r}")
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, AdmissibilityLost) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SplitmaError as exc:  # pragma: no cover
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    summary = {k: v for k, v in report.items()
               if not isinstance(v, (list, dict))}
    print(json.dumps(summary, indent=2))
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
