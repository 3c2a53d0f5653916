"""Command line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 verification
failure, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, parse_config
from .pipeline import ALIASES, STAGES, expand_stages, run_experiment
from .verify import VERIFIERS

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _experiment_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="experiment config file (key = value lines)")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--seed", type=int, help="override the experiment seed")
    p.add_argument("--force", action="store_true", help="re-run stages even if up to date")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dtb", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for stage in STAGES:
        _experiment_args(sub.add_parser(stage, help=f"run the {stage} stage"))
    run = sub.add_parser("run", help="run several stages in dependency order")
    _experiment_args(run)
    run.add_argument("--stage", action="append", metavar="NAME",
                     help=f"stage to run (repeatable; default all): {', '.join(STAGES + tuple(ALIASES))}")
    ver = sub.add_parser("verify", help="built-in table, gradient and combinatorics checks")
    ver.add_argument("target", nargs="?", default="ALL", type=str.upper,
                     choices=list(VERIFIERS) + ["ALL"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    if args.command == "verify":
        targets = list(VERIFIERS) if args.target == "ALL" else [args.target]
        ok = True
        for t in targets:
            rep = VERIFIERS[t]()
            print(rep.render())
            ok &= rep.ok
        return EXIT_OK if ok else EXIT_VERIFY

    try:
        cfg = parse_config(args.config).with_overrides(args.out, args.seed).validate()
        stages = expand_stages(args.stage or STAGES) if args.command == "run" else [args.command]
    except (ConfigError, ValueError) as exc:
        print(f"dtb: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        record = run_experiment(cfg, stages, force=args.force)
    except Exception as exc:  # noqa: BLE001 - every stage failure maps to one exit code
        logging.getLogger("dtb").debug("stage failure", exc_info=True)
        print(f"dtb: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for stage, status in record.stages.items():
        extra = f" ({record.timings[stage]:.1f}s)" if stage in record.timings else ""
        print(f"{stage}: {status}{extra}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
