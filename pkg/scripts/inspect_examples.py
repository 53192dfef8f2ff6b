"""Print generated training examples in a readable form.

Each masked slot is shown as ``<shown>=>label@lang`` where ``shown`` is the
piece the model sees ([MASK], the kept piece or a random one) and ``label``
the piece it has to predict in language ``lang``.

Usage:
    python scripts/inspect_examples.py EXAMPLES --vocab VOCAB [--limit N]
        [--languages sa,sb]
"""

from __future__ import annotations

import argparse
import sys
from itertools import islice
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from src.examplegen import TrainingExample, read_examples  # noqa: E402
from src.tokenizer import Vocab  # noqa: E402

DEFAULT_LIMIT = 5


def render_example(
    example: TrainingExample, vocab: Vocab, languages: list[str] | None = None
) -> str:
    """One line per example: source language, then every piece in order."""

    def lang_name(lang_id: int) -> str:
        if languages and 0 <= lang_id < len(languages):
            return languages[lang_id]
        return str(lang_id)

    labels = {
        pos: (label, lang)
        for pos, label, lang in zip(
            example.masked_positions, example.label_ids, example.label_lang_ids
        )
    }
    parts = []
    for pos, token in enumerate(example.token_ids):
        piece = vocab.pieces[token]
        if pos in labels:
            label, lang = labels[pos]
            piece = f"<{piece}=>{vocab.pieces[label]}@{lang_name(lang)}>"
        parts.append(piece)
    return f"{lang_name(example.source_lang)}: {' '.join(parts)}"


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("examples", help="Examples JSONL written by gen-data")
    parser.add_argument("--vocab", required=True, help="Vocabulary file")
    parser.add_argument("--limit", type=int, default=DEFAULT_LIMIT)
    parser.add_argument("--languages", help="Comma-separated codes in id order")
    args = parser.parse_args(argv)

    vocab = Vocab.load(args.vocab)
    languages = args.languages.split(",") if args.languages else None
    for example in islice(read_examples(args.examples), args.limit):
        print(render_example(example, vocab, languages), flush=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
