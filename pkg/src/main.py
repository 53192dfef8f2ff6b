"""Command-line entry point.

Usage:
    python -m src.main synth --out-dir data/synth
    python -m src.main merge-dicts data/synth/dicts/*.txt --out data/lexicon.jsonl
    python -m src.main build-vocab --manifest data/synth/corpus/manifest.json \
        --out data/vocab.txt
    python -m src.main gen-data --manifest ... --vocab ... --lexicon ... --out ...
    python -m src.main train --examples ... --vocab ... --out-dir runs/dict
    python -m src.main eval-retrieval --checkpoint ... --pairs ... --vocab ... \
        --out-csv runs/dict/retrieval.csv
    python -m src.main compare --out-dir runs/compare
"""

import argparse
import json
import logging
import sys

from . import app
from .config import describe_keys, load_run_config
from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> UsageParser:
    common = UsageParser(add_help=False)
    common.add_argument("--config", help="Path to config.yml", default=None)
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a config key, e.g. gen.t=0.7 (repeatable)",
    )
    common.add_argument("--seed", type=int, help="Global seed for every RNG")
    common.add_argument("--workers", type=int, help="Parallel workers")
    common.add_argument("--log-level", help="debug, info, warning or error")
    common.add_argument(
        "--no-lang-conditioning",
        action="store_true",
        help="Drop the language embedding from the MLM head",
    )

    parser = UsageParser(
        prog="dict-mlm",
        description="Dictionary-based multilingual MLM pretraining toolkit",
        epilog="config keys (key = default):\n  " + "\n  ".join(describe_keys()),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("merge-dicts", parents=[common], help="Merge MUSE dictionaries")
    p.add_argument("inputs", nargs="+", help="MUSE files named like xx-yy.txt")
    p.add_argument("--out", required=True, help="Lexicon JSONL output")

    p = sub.add_parser("build-vocab", parents=[common], help="Train the vocabulary")
    p.add_argument("--manifest", required=True, help="Corpus manifest JSON")
    p.add_argument("--out", required=True, help="Vocabulary file output")
    p.add_argument("--vocab-size", type=int, help="Target vocabulary size")
    p.add_argument("--min-freq", type=int, default=2, help="Minimum pair frequency")

    p = sub.add_parser("gen-data", parents=[common], help="Generate training examples")
    p.add_argument("--manifest", required=True, help="Corpus manifest JSON")
    p.add_argument("--vocab", required=True, help="Vocabulary file")
    p.add_argument("--lexicon", help="Lexicon JSONL (not needed for vanilla_mlm)")
    p.add_argument("--out", required=True, help="Examples JSONL output")
    p.add_argument(
        "--validate", action="store_true", help="Check every example's invariants"
    )

    p = sub.add_parser("stats", parents=[common], help="Report masking statistics")
    p.add_argument("--examples", required=True, help="Examples JSONL")
    p.add_argument("--out", help="Stats JSON output")
    p.add_argument("--lexicon", help="Lexicon JSONL, for the coverage report")
    p.add_argument("--manifest", help="Corpus manifest, for the coverage report")

    p = sub.add_parser("train", parents=[common], help="Pretrain the model")
    p.add_argument("--examples", required=True, help="Examples JSONL")
    p.add_argument("--vocab", required=True, help="Vocabulary file")
    p.add_argument("--out-dir", required=True, help="Checkpoint and metrics dir")
    p.add_argument("--resume", help="Checkpoint to resume from")

    p = sub.add_parser(
        "eval-retrieval", parents=[common], help="Layerwise sentence retrieval"
    )
    p.add_argument("--checkpoint", required=True, help="Model checkpoint")
    p.add_argument("--pairs", required=True, help="Parallel pairs TSV")
    p.add_argument("--vocab", required=True, help="Vocabulary file")
    p.add_argument("--out-csv", required=True, help="layer,accuracy CSV output")
    p.add_argument("--out-json", help="JSON report output")

    p = sub.add_parser("synth", parents=[common], help="Generate synthetic languages")
    p.add_argument("--out-dir", required=True, help="Output directory")

    p = sub.add_parser(
        "compare", parents=[common], help="Compare model variants by retrieval"
    )
    p.add_argument("--out-dir", required=True, help="Output directory")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument(
        "--ablation",
        action="store_true",
        help="Also train DICT-MLM without the language-conditioned head",
    )
    p.add_argument(
        "--models",
        nargs="+",
        choices=sorted(app.MODEL_VARIANTS),
        help="Models to train (default: dict_mlm vanilla_mlm)",
    )
    p.add_argument("--vocab-size", type=int, help="Target vocabulary size")
    return parser


def dispatch(args, cfg) -> None:
    if args.command == "merge-dicts":
        app.run_merge_dicts(cfg, args.inputs, args.out)
    elif args.command == "build-vocab":
        app.run_build_vocab(
            cfg, args.manifest, args.out, args.vocab_size, args.min_freq
        )
    elif args.command == "gen-data":
        app.run_gen_data(
            cfg,
            args.manifest,
            args.vocab,
            args.out,
            lexicon_path=args.lexicon,
            validate=args.validate,
        )
    elif args.command == "stats":
        report = app.run_stats(
            cfg, args.examples, args.out, args.lexicon, args.manifest
        )
        if not args.out:
            print(json.dumps(report, indent=4, sort_keys=True, ensure_ascii=False))
    elif args.command == "train":
        app.run_train(cfg, args.examples, args.vocab, args.out_dir, args.resume)
    elif args.command == "eval-retrieval":
        app.run_eval_retrieval(
            cfg, args.checkpoint, args.pairs, args.vocab, args.out_csv, args.out_json
        )
    elif args.command == "synth":
        app.run_synth(cfg, args.out_dir)
    elif args.command == "compare":
        app.run_compare(
            cfg,
            args.out_dir,
            seeds=args.seeds,
            ablation=args.ablation,
            vocab_size=args.vocab_size,
            models=args.models,
        )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_run_config(
            args.config,
            args.overrides,
            seed=args.seed,
            workers=args.workers,
            log_level=args.log_level,
            no_lang_conditioning=args.no_lang_conditioning,
        )
    except ConfigError as exc:
        print(f"dict-mlm: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    app.setup_logging(cfg.log_level)

    try:
        dispatch(args, cfg)
    except ConfigError as exc:
        logger.error("Config error: %s", exc)
        return EXIT_USAGE
    except (
        DataError,
        FileNotFoundError,
        UnicodeDecodeError,
        json.JSONDecodeError,
    ) as exc:
        logger.error("Data error: %s", exc)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
