"""Command-line entry point.

Subcommands: ``gen``, ``train``, ``eval``, ``sweep-noise``, ``ablate``,
``report``. All non-report commands require ``--seed`` and ``--out``; a
declarative JSON config can be supplied with ``--config`` and individual
flags override it. Exit codes: 0 success, 2 configuration error, 3 data
error, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import sys

from . import harness
from .errors import AnnotationError, ConfigError, DivergenceError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="path to a JSON run config")
    sub.add_argument("--seed", type=int, required=True, help="base seed of this command")
    sub.add_argument("--out", required=True, help="run directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plancast",
        description="Generate corpora, train forecasters, and evaluate plans.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("gen", help="generate or import the corpus of a run")
    _add_common(gen)
    gen.add_argument("--preset", choices=sorted(harness._PRESETS), help="corpus preset override")

    trn = subs.add_parser("train", help="train one forecaster checkpoint")
    _add_common(trn)
    trn.add_argument("--condition", help="input condition (default from config)")
    trn.add_argument("--resume", help="checkpoint to resume from")

    ev = subs.add_parser("eval", help="evaluate a checkpoint or baseline")
    _add_common(ev)
    group = ev.add_mutually_exclusive_group(required=True)
    group.add_argument("--model", help="checkpoint path")
    group.add_argument("--baseline", choices=harness.BASELINES, help="non-neural policy")
    ev.add_argument("--noise", type=float, help="label corruption rate override")

    sw = subs.add_parser("sweep-noise", help="corruption sweep of full vs no-observation models")
    _add_common(sw)

    ab = subs.add_parser("ablate", help="input-condition ablation on clean segments")
    _add_common(ab)

    rp = subs.add_parser("report", help="consolidate a run directory into a report")
    rp.add_argument("--out", required=True, help="run directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            path = harness.cmd_report(args.out)
            print(path)
            return EXIT_OK
        overrides = {}
        if args.command == "gen" and args.preset:
            overrides = {"corpus": {"preset": args.preset}}
        cfg = harness.load_config(args.config, overrides)
        if args.command == "gen":
            bundle = harness.cmd_gen(cfg, args.seed, args.out)
            print(f"corpus: {len(bundle.train)} train / {len(bundle.test)} test videos, "
                  f"{bundle.vocab.n_actions} actions, {bundle.vocab.n_goals} goals")
        elif args.command == "train":
            ckpt = harness.cmd_train(cfg, args.seed, args.out, condition=args.condition, resume=args.resume)
            print(ckpt)
        elif args.command == "eval":
            dest = harness.cmd_eval(
                cfg, args.seed, args.out, model=args.model, baseline=args.baseline, noise=args.noise
            )
            print(dest)
        elif args.command == "sweep-noise":
            print(harness.cmd_sweep_noise(cfg, args.seed, args.out))
        elif args.command == "ablate":
            print(harness.cmd_ablate(cfg, args.seed, args.out))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AnnotationError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
