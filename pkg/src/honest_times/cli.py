"""Command line entry point: ``honest-times run|validate|demo-counterexample``."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from . import experiment as ex

log = logging.getLogger("honest_times")


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int)
    p.add_argument("--paths", dest="path_count", type=int, help="number of simulated paths")
    p.add_argument("--step", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--out", dest="output_dir", help="output directory")
    p.add_argument("--tests", help="comma separated test names")
    p.add_argument("--emit", help="comma separated subset of csv,json,plotdata")
    p.add_argument("--family", choices=[f.value for f in ex.Family])
    p.add_argument("--sigma", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument(
        "--tail-completion",
        dest="tail_completion",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="complete the supremum beyond the horizon from the terminal value",
    )
    p.add_argument(
        "--bridge-max",
        dest="bridge_max",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="sample the exact maximum between grid points from the Brownian bridge",
    )


_OVERRIDE_KEYS = (
    "seed", "path_count", "step", "horizon", "output_dir", "tests", "emit",
    "family", "sigma", "workers", "tail_completion", "bridge_max",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="honest-times", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "run an experiment"), ("validate", "check a configuration")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="flat YAML key: value file")
        _add_overrides(p)
    p = sub.add_parser("demo-counterexample", help="run the exp_jump counterexample with its expected outcome")
    _add_overrides(p)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    return {k: getattr(args, k, None) for k in _OVERRIDE_KEYS}


def _summarise(result: ex.RunResult) -> None:
    for r in result.reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.test_name}: statistic={r.statistic:.6g} threshold={r.threshold:.6g} n={r.sample_size}")
    for path in result.files:
        print(f"wrote {path}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "demo-counterexample":
            config = ex.counterexample_demo_config(**_overrides(args))
        else:
            try:
                file_values = ex.load_config_file(args.config)
            except OSError as exc:
                print(f"cannot read {args.config}: {exc}", file=sys.stderr)
                return ex.EXIT_CONFIG_ERROR
            config = ex.build_config(file_values, _overrides(args))
    except (ex.ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return ex.EXIT_CONFIG_ERROR

    problems = ex.validate(config)
    if args.command == "validate":
        for p in problems:
            print(p)
        if not problems:
            print("ok")
        return ex.EXIT_CONFIG_ERROR if problems else ex.EXIT_OK
    if problems:
        for p in problems:
            print(f"config error: {p}", file=sys.stderr)
        return ex.EXIT_CONFIG_ERROR

    result = ex.run(config)
    _summarise(result)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
