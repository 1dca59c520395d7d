"""Command-line entry point: ``pa-retrieval <stage> [options]``.

Exit codes: 0 success, 1 user error (bad arguments, config, or a missing earlier stage),
2 internal error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from .config import OUT_ENV, RunConfig
from .eval import ABLATION_KINDS
from .pipeline import MissingStageError, Pipeline, TRAINERS

log = logging.getLogger("pa_retrieval")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with 2, which we reserve for internal errors
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run config (defaults reproduce the standard protocol)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, dotted for nested keys (e.g. cql.alpha=0.5)")
    common.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    common.add_argument("--out", type=Path, help=f"run directory (default: ${OUT_ENV} or runs/default)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="pa-retrieval", description="Adaptive policy retrieval for prior authorization.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-corpus", parents=[common], help="build the synthetic policy corpus")
    sub.add_parser("gen-requests", parents=[common], help="generate train and test requests")
    c = sub.add_parser("collect", parents=[common], help="log behavior-policy episodes")
    c.add_argument("--lam", type=float, help="step cost baked into the logged rewards")
    t = sub.add_parser("train", parents=[common], help="train an offline policy")
    t.add_argument("algorithm", choices=sorted(TRAINERS))
    sub.add_parser("eval", parents=[common], help="on-policy evaluation of trained policies and baselines")
    sub.add_parser("ope", parents=[common], help="WIS and FQE estimates for trained policies")
    sub.add_parser("significance", parents=[common], help="paired t-tests between evaluated policies")
    a = sub.add_parser("ablate", parents=[common], help="sweep one hyperparameter")
    a.add_argument("kind", choices=sorted(ABLATION_KINDS))
    a.add_argument("--grid", type=_floats)
    a.add_argument("--seeds", type=_ints)
    sub.add_parser("report", parents=[common], help="assemble tables and figure data from earlier stages")
    sub.add_parser("all", parents=[common], help="run every stage in order")
    sub.add_parser("show-config", parents=[common], help="print the effective config")
    return p


def load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out_dir={args.out}")
    return cfg.with_overrides(overrides) if overrides else cfg


def run(args: argparse.Namespace) -> None:
    cfg = load_config(args)
    if args.command == "show-config":
        sys.stdout.write(cfg.dumps())
        return
    pipe = Pipeline(cfg)
    cmd = args.command
    if cmd == "gen-corpus":
        out = pipe.gen_corpus()
    elif cmd == "gen-requests":
        out = pipe.gen_requests()
    elif cmd == "collect":
        out = pipe.collect(args.lam)
    elif cmd == "train":
        out = pipe.train_stage(args.algorithm)
    elif cmd == "eval":
        out = pipe.evaluate()
    elif cmd == "ope":
        out = pipe.ope()
    elif cmd == "significance":
        out = pipe.significance()
    elif cmd == "ablate":
        out = pipe.ablate(args.kind, args.grid, args.seeds)
    elif cmd == "report":
        out = pipe.report()
        sys.stdout.write((out / "main.txt").read_text())
    elif cmd == "all":
        out = pipe.run_all()
        sys.stdout.write((out / "main.txt").read_text())
    else:  # pragma: no cover - argparse restricts the choices
        raise _UsageError(f"unknown command {cmd}")
    log.info("%s: wrote %s", cmd, out)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USER
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        run(args)
    except MissingStageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (ValueError, FileNotFoundError, _UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001 - the exit code is the contract
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
