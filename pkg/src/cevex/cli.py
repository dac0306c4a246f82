"""Command-line interface: `run`, `sweep`, `evaluate`, and `gen-data`.

Every RunConfig field is exposed as a flag; a flat key-value config file can
set the same options and flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields

from . import corpus as corpus_mod
from .config import ConfigError, RunConfig, load_run_config, write_config_file
from .pipeline import CheckpointError, evaluate_predictions, run, sweep

logger = logging.getLogger(__name__)

_FLAG_TYPES = {"int": int, "float": float, "str": str, "str | None": str}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        annotation = str(f.type)
        if annotation == "bool":
            parser.add_argument(
                flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None,
                help=f"(default: {f.default})",
            )
        else:
            parser.add_argument(
                flag, dest=f.name, type=_FLAG_TYPES.get(annotation, str), default=None,
                help=f"(default: {f.default})",
            )


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
    return load_run_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cevex", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute the K-stage pipeline")
    p_run.add_argument("--config", default=None, help="flat key = value config file")
    _add_config_flags(p_run)

    p_sweep = sub.add_parser("sweep", help="repeat a run over several type permutations")
    p_sweep.add_argument("--config", default=None)
    p_sweep.add_argument("--permutations", type=int, default=6)
    _add_config_flags(p_sweep)

    p_eval = sub.add_parser("evaluate", help="score a predictions file against gold")
    p_eval.add_argument("--gold", required=True, help="gold corpus directory or .jsonl")
    p_eval.add_argument("--predictions", required=True, help="predictions .jsonl")

    p_gen = sub.add_parser("gen-data", help="write a synthetic corpus")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--n-types", type=int, default=20)
    p_gen.add_argument("--max-count", type=int, default=200)
    p_gen.add_argument("--min-count", type=int, default=5)
    p_gen.add_argument("--vocab-size", type=int, default=120)
    p_gen.add_argument("--seed", type=int, default=13)
    p_gen.add_argument("--multi-type-prob", type=float, default=0.35)
    p_gen.add_argument("--negative-ratio", type=float, default=0.25)
    p_gen.add_argument(
        "--arguments", action=argparse.BooleanOptionalAction, default=True,
        help="include entity and argument annotations",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "run":
            config = _config_from_args(args)
            run_dir = run(config)
            write_config_file(config, run_dir / "config.txt")
            print(run_dir)
        elif args.command == "sweep":
            config = _config_from_args(args)
            aggregate = sweep(config, args.permutations)
            for name, entry in aggregate["metrics"].items():
                print(f"{name}: mean={entry['mean']:.4f} std={entry['std']:.4f} (n={entry['n']})")
            if aggregate["failures"]:
                print(f"failed permutations: {aggregate['failures']}", file=sys.stderr)
                return 1
        elif args.command == "evaluate":
            result = evaluate_predictions(args.gold, args.predictions)
            print(json.dumps(result, indent=2))
        elif args.command == "gen-data":
            counts = corpus_mod.power_law_counts(args.n_types, args.max_count, args.min_count)
            schema, sentences = corpus_mod.generate_synthetic(
                args.n_types, counts, args.vocab_size, args.seed,
                multi_type_prob=args.multi_type_prob,
                negative_ratio=args.negative_ratio,
                include_arguments=args.arguments,
            )
            corpus_mod.save_corpus(schema, sentences, args.out)
            n_mentions = sum(len(s.events) for s in sentences)
            print(f"{args.out}: {len(sentences)} sentences, {n_mentions} mentions, counts={counts}")
    except (ConfigError, CheckpointError, corpus_mod.CorpusError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
