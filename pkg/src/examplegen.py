"""DICT-MLM / DICT-TLM / vanilla MLM training-example generation."""

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from itertools import islice
from typing import Iterable, Iterator, List, Sequence, Tuple

import numpy as np

from .config import GenConfig
from .corpus import Sentence
from .errors import DataError, Diagnostic, ExampleError
from .lexicon import LangId, LanguageRegistry, Lexicon, lookup, sample_synonym
from .stats import GenStats
from .tokenizer import CLS, MASK, SEP, TokenizedSentence, Vocab, encode, encode_word

logger = logging.getLogger(__name__)

CHUNK_SIZE = 256


@dataclass
class TrainingExample:
    token_ids: List[int]
    lang_ids: List[int]
    segment_ids: List[int]
    masked_positions: List[int]
    label_ids: List[int]
    label_lang_ids: List[int]
    source_lang: int = 0
    word_count: int = 0
    masked_word_count: int = 0
    xling_word_count: int = 0
    # one of "m" (mask), "k" (keep) or "r" (random) per masked position
    corruption: str = ""

    def validate(self, max_seq_len: int | None = None, tlm: bool = False) -> None:
        """Raise :class:`ExampleError` if any structural invariant is broken."""
        n = len(self.token_ids)
        if not (len(self.lang_ids) == len(self.segment_ids) == n):
            raise ExampleError("token, language and segment sequences differ in length")
        if max_seq_len is not None and n > max_seq_len:
            raise ExampleError(f"example length {n} exceeds max_seq_len {max_seq_len}")
        m = len(self.masked_positions)
        if m < 1 or not (len(self.label_ids) == len(self.label_lang_ids) == m):
            raise ExampleError(
                "masked positions and labels must align and be non-empty"
            )
        positions = self.masked_positions
        if any(b <= a for a, b in zip(positions, positions[1:])):
            raise ExampleError("masked positions must be strictly increasing")
        for pos, lang in zip(self.masked_positions, self.label_lang_ids):
            if not 0 <= pos < n or self.token_ids[pos] in (CLS, SEP):
                raise ExampleError(f"masked position {pos} is a special token slot")
            if self.lang_ids[pos] != lang:
                raise ExampleError(
                    f"label language {lang} differs from token language at {pos}"
                )
        if self.corruption and (
            len(self.corruption) != m or set(self.corruption) - set("mkr")
        ):
            raise ExampleError("corruption needs one of m, k, r per masked position")
        if not tlm and any(self.segment_ids):
            raise ExampleError("segment ids must be 0 outside DICT-TLM")

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingExample":
        return cls(**data)


def is_eligible(word: str, lang: LangId, lex: Lexicon | None) -> bool:
    return lex is not None and bool(lookup(word, lang, lex))


def mask_budget(count: int, cfg: GenConfig, rng: np.random.Generator) -> int:
    expected = cfg.mask_rate * count
    if cfg.budget_rounding == "stochastic":
        base = math.floor(expected)
        budget = base + int(rng.random() < expected - base)
    else:
        budget = math.floor(expected + 0.5)
    return min(count, max(1, budget))


def select_mask_words(
    sent: TokenizedSentence,
    lex: Lexicon | None,
    cfg: GenConfig,
    rng: np.random.Generator,
) -> List[int]:
    """Pick whole words to mask, lexicon-eligible words first."""
    n = len(sent.words)
    if n == 0:
        raise ExampleError("sentence has no words")
    eligible = [
        i
        for i in range(n)
        if is_eligible(sent.words[i], sent.lang_per_word[i], lex)
    ]
    eligible_set = set(eligible)
    others = [i for i in range(n) if i not in eligible_set]
    if cfg.mask_budget == "eligible_only" and eligible:
        budget = mask_budget(len(eligible), cfg, rng)
    else:
        budget = mask_budget(n, cfg, rng)
    take = min(budget, len(eligible))
    chosen = []
    if take:
        chosen = [int(i) for i in rng.choice(eligible, size=take, replace=False)]
    rest = budget - take
    if rest:
        chosen += [int(i) for i in rng.choice(others, size=rest, replace=False)]
    return sorted(chosen)


def choose_label(
    word: str,
    lang: LangId,
    eligible: bool,
    lex: Lexicon | None,
    cfg: GenConfig,
    rng: np.random.Generator,
) -> Tuple[str, LangId]:
    """Cross-lingual synonym with probability t, else the original word.

    The Bernoulli draw happens for every word so vanilla MLM and t=0 consume
    the generator identically.
    """
    t = 0.0 if cfg.mode == "vanilla_mlm" else cfg.t
    if rng.random() < t and eligible:
        syn = sample_synonym(word, lang, lex, rng, cfg.synonym_sampling)
        if syn is not None:
            return syn.word, syn.lang
    return word, lang


def corrupt(
    tokens: List[int],
    positions: Sequence[int],
    labels: Sequence[int],
    vocab_size: int,
    special_count: int,
    rng: np.random.Generator,
) -> str:
    """80% [MASK], 10% the label piece, 10% a random non-special piece.

    Returns the branch taken per position, since a random draw can land on
    the label itself.
    """
    branches = []
    for pos, label in zip(positions, labels):
        u = rng.random()
        if u < 0.8:
            tokens[pos] = MASK
            branches.append("m")
        elif u < 0.9:
            tokens[pos] = label
            branches.append("k")
        else:
            tokens[pos] = int(rng.integers(special_count, vocab_size))
            branches.append("r")
    return "".join(branches)


def _fit_words(lengths: Sequence[int], budget: int) -> int:
    """Number of leading words whose pieces fit in ``budget``."""
    total = 0
    for i, n in enumerate(lengths):
        total += n
        if total > budget:
            return i
    return len(lengths)


def build_dict_mlm_example(
    sent: TokenizedSentence,
    cfg: GenConfig,
    lex: Lexicon | None,
    vocab: Vocab,
    rng: np.random.Generator,
) -> TrainingExample:
    if not sent.words:
        raise ExampleError("sentence has no words")
    source = sent.lang_per_word[0]
    room = cfg.max_seq_len - 2
    lengths = [end - start for start, end in sent.word_spans]
    kept = _fit_words(lengths, room)
    if kept == 0:
        raise ExampleError("first word does not fit in max_seq_len")
    if kept < len(sent.words):
        sent = TokenizedSentence(
            sent.words[:kept],
            sent.piece_ids[: sent.word_spans[kept - 1][1]],
            sent.word_spans[:kept],
            sent.lang_per_word[:kept],
        )

    selected = select_mask_words(sent, lex, cfg, rng)
    labels = {}
    for i in selected:
        word, lang = sent.words[i], sent.lang_per_word[i]
        label_word, label_lang = choose_label(
            word, lang, is_eligible(word, lang, lex), lex, cfg, rng
        )
        if label_word == word and label_lang == lang:
            pieces = sent.word_pieces(i)
        else:
            pieces = encode_word(label_word, vocab)
        labels[i] = (pieces, label_lang)

    # substituted labels can be longer than the words they replace
    lengths = [
        len(labels[i][0]) if i in labels else end - start
        for i, (start, end) in enumerate(sent.word_spans)
    ]
    kept = _fit_words(lengths, room)
    selected = [i for i in selected if i < kept]
    if not selected:
        raise ExampleError("no masked word survives truncation")

    tokens, langs = [CLS], [source.id]
    positions, label_ids, label_langs = [], [], []
    xling = 0
    for i in range(kept):
        if i in labels and i in selected:
            pieces, lang = labels[i]
            xling += int(lang != sent.lang_per_word[i])
            for piece in pieces:
                positions.append(len(tokens))
                label_ids.append(piece)
                label_langs.append(lang.id)
                tokens.append(piece)
                langs.append(lang.id)
        else:
            pieces = sent.word_pieces(i)
            tokens.extend(pieces)
            langs.extend([sent.lang_per_word[i].id] * len(pieces))
    tokens.append(SEP)
    langs.append(source.id)
    corruption = corrupt(
        tokens, positions, label_ids, len(vocab), vocab.special_count, rng
    )
    return TrainingExample(
        token_ids=tokens,
        lang_ids=langs,
        segment_ids=[0] * len(tokens),
        masked_positions=positions,
        label_ids=label_ids,
        label_lang_ids=label_langs,
        source_lang=source.id,
        word_count=kept,
        masked_word_count=len(selected),
        xling_word_count=xling,
        corruption=corruption,
    )


def build_tlm_example(
    sent: TokenizedSentence,
    cfg: GenConfig,
    lex: Lexicon | None,
    vocab: Vocab,
    rng: np.random.Generator,
) -> TrainingExample:
    """Original sentence + code-switched copy, plain whole-word MLM over both."""
    if not sent.words:
        raise ExampleError("sentence has no words")
    source = sent.lang_per_word[0]
    half_a = [
        (sent.word_pieces(i), sent.lang_per_word[i]) for i in range(len(sent.words))
    ]
    half_b = []
    for i, (pieces, lang) in enumerate(half_a):
        word = sent.words[i]
        if is_eligible(word, lang, lex) and rng.random() < cfg.tlm_replace_prob:
            syn = sample_synonym(word, lang, lex, rng, cfg.synonym_sampling)
            half_b.append((encode_word(syn.word, vocab), syn.lang))
        else:
            half_b.append((pieces, lang))

    def size(half) -> int:
        return sum(len(p) for p, _ in half)

    while half_a and half_b and size(half_a) + size(half_b) + 3 > cfg.max_seq_len:
        if size(half_a) > size(half_b):
            half_a.pop()
        else:
            half_b.pop()
    if not half_a or not half_b:
        raise ExampleError("sentence pair does not fit in max_seq_len")

    words = half_a + half_b
    budget = mask_budget(len(words), cfg, rng)
    selected = {int(i) for i in rng.choice(len(words), size=budget, replace=False)}

    tokens, langs, segments = [CLS], [source.id], [0]
    positions, label_ids, label_langs = [], [], []
    xling = 0
    for w, (pieces, lang) in enumerate(words):
        segment = 0 if w < len(half_a) else 1
        if w == len(half_a):
            tokens.append(SEP)
            langs.append(source.id)
            segments.append(0)
        if w in selected:
            xling += int(lang != source)
            for piece in pieces:
                positions.append(len(tokens))
                label_ids.append(piece)
                label_langs.append(lang.id)
                tokens.append(piece)
                langs.append(lang.id)
                segments.append(segment)
        else:
            tokens.extend(pieces)
            langs.extend([lang.id] * len(pieces))
            segments.extend([segment] * len(pieces))
    tokens.append(SEP)
    langs.append(source.id)
    segments.append(1)
    corruption = corrupt(
        tokens, positions, label_ids, len(vocab), vocab.special_count, rng
    )
    return TrainingExample(
        token_ids=tokens,
        lang_ids=langs,
        segment_ids=segments,
        masked_positions=positions,
        label_ids=label_ids,
        label_lang_ids=label_langs,
        source_lang=source.id,
        word_count=len(words),
        masked_word_count=len(selected),
        xling_word_count=xling,
        corruption=corruption,
    )


def example_rng(seed: int, sentence_index: int, copy: int) -> np.random.Generator:
    """Independent stream per (sentence, duplicate); no dependence on workers."""
    return np.random.default_rng(np.random.SeedSequence([seed, sentence_index, copy]))


def _examples_for(
    index: int,
    sentence: Sentence,
    cfg: GenConfig,
    lex: Lexicon | None,
    vocab: Vocab,
) -> Tuple[List[TrainingExample], List[Diagnostic]]:
    builder = build_tlm_example if cfg.mode == "dict_tlm" else build_dict_mlm_example
    source = f"sentence {index}"
    try:
        tokenized = encode(sentence.text, sentence.lang, vocab)
    except DataError as exc:
        return [], [Diagnostic(source, 0, str(exc))]
    examples, diagnostics = [], []
    for copy in range(cfg.duplication):
        rng = example_rng(cfg.seed or 0, index, copy)
        try:
            examples.append(builder(tokenized, cfg, lex, vocab, rng))
        except ExampleError as exc:
            diagnostics.append(Diagnostic(source, copy, str(exc)))
    return examples, diagnostics


def generate(
    sentences: Iterable[Sentence],
    cfg: GenConfig,
    lex: Lexicon | None,
    vocab: Vocab,
    *,
    workers: int = 1,
    registry: LanguageRegistry | None = None,
    validate: bool = False,
) -> Tuple[Iterator[TrainingExample], GenStats]:
    """Turn a sentence stream into examples, ``duplication`` copies each.

    Returns the example iterator and a :class:`GenStats` that fills in as the
    iterator is consumed. Output order and content do not depend on
    ``workers``.
    """
    stats = GenStats()

    def run() -> Iterator[TrainingExample]:
        numbered = enumerate(sentences)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            while True:
                chunk = list(islice(numbered, CHUNK_SIZE))
                if not chunk:
                    break
                results = pool.map(
                    lambda item: _examples_for(item[0], item[1], cfg, lex, vocab),
                    chunk,
                )
                for examples, diagnostics in results:
                    stats.sentences += 1
                    for diag in diagnostics:
                        stats.skip(diag)
                    for example in examples:
                        if validate:
                            example.validate(
                                cfg.max_seq_len, tlm=cfg.mode == "dict_tlm"
                            )
                        stats.update(example, registry)
                        yield example
        logger.info(
            "Generated %d examples from %d sentences (%d skipped)",
            stats.examples,
            stats.sentences,
            stats.skipped,
        )

    return run(), stats


def write_examples(path: str, examples: Iterable[TrainingExample]) -> int:
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for example in examples:
            f.write(example.to_json() + "\n")
            count += 1
    return count


def read_examples(path: str) -> Iterator[TrainingExample]:
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield TrainingExample.from_dict(json.loads(line))
            except (TypeError, json.JSONDecodeError) as exc:
                raise DataError(f"{path}:{line_no}: bad example record: {exc}") from exc
