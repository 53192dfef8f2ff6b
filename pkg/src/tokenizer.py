"""Shared multilingual WordPiece vocabulary with whole-word spans."""

import logging
import os
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

from .errors import DataError
from .lexicon import LangId

logger = logging.getLogger(__name__)

PAD, UNK, CLS, SEP, MASK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
CONTINUATION = "##"
MAX_PIECES_PER_WORD = 32


def _is_punctuation(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def pretokenize(text: str) -> List[str]:
    """Split on Unicode whitespace, then split off punctuation characters."""
    words: List[str] = []
    for chunk in unicodedata.normalize("NFC", text).split():
        current = ""
        for ch in chunk:
            if _is_punctuation(ch):
                if current:
                    words.append(current)
                    current = ""
                words.append(ch)
            else:
                current += ch
        if current:
            words.append(current)
    return words


class Vocab:
    """Piece strings indexed by id; specials occupy ids 0-4."""

    def __init__(self, pieces: Sequence[str]) -> None:
        if list(pieces[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise DataError(
                f"vocab must start with {', '.join(SPECIAL_TOKENS)} on lines 0-4"
            )
        self.pieces = list(pieces)
        self.index: Dict[str, int] = {}
        for i, piece in enumerate(self.pieces):
            if piece in self.index:
                raise DataError(f"duplicate vocab piece {piece!r} at line {i}")
            self.index[piece] = i

    def __len__(self) -> int:
        return len(self.pieces)

    def __contains__(self, piece: str) -> bool:
        return piece in self.index

    def id_of(self, piece: str) -> int:
        return self.index.get(piece, UNK)

    @property
    def special_count(self) -> int:
        return len(SPECIAL_TOKENS)

    def save(self, path: str) -> None:
        dirname = os.path.dirname(path)
        if dirname:
            os.makedirs(dirname, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for piece in self.pieces:
                f.write(piece + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocab":
        with open(path, "r", encoding="utf-8") as f:
            pieces = [line.rstrip("\n") for line in f]
        while pieces and pieces[-1] == "":
            pieces.pop()
        return cls(pieces)


@dataclass
class TokenizedSentence:
    """Pieces of one sentence plus the whole-word structure over them."""

    words: List[str]
    piece_ids: List[int]
    word_spans: List[Tuple[int, int]]
    lang_per_word: List[LangId]

    def word_pieces(self, index: int) -> List[int]:
        start, end = self.word_spans[index]
        return self.piece_ids[start:end]

    def __len__(self) -> int:
        return len(self.words)


def _merge_symbols(symbols: Tuple[str, ...], pair: Tuple[str, str], merged: str):
    out: List[str] = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == pair:
            out.append(merged)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def _pairs_of(symbols: Tuple[str, ...]) -> Counter:
    return Counter(zip(symbols, symbols[1:]))


def train_vocab(
    corpus_iter: Iterable[str], vocab_size: int, min_freq: int = 2
) -> Vocab:
    """Learn pieces by frequency-scored pair merging.

    Words start as characters (``c``, ``##c``, ...); the most frequent
    adjacent pair is merged until the budget is reached or the best pair
    falls below ``min_freq``. Ties go to the lexicographically smallest pair.

    Each character is charged once against the budget: its word-initial form
    if it ever starts a word, else its ``##`` form. The other form is kept
    only while some word still needs it, or when the budget has room left.
    """
    word_freq: Counter = Counter()
    for text in corpus_iter:
        word_freq.update(pretokenize(text))
    if not word_freq:
        raise DataError("cannot train a vocabulary on an empty corpus")

    words: List[Tuple[str, ...]] = []
    freqs: List[int] = []
    initials = set()
    chars = set()
    for word, freq in sorted(word_freq.items()):
        symbols = tuple(
            ch if i == 0 else CONTINUATION + ch for i, ch in enumerate(word)
        )
        initials.add(word[0])
        chars.update(word)
        words.append(symbols)
        freqs.append(freq)

    required = {ch if ch in initials else CONTINUATION + ch for ch in chars}
    floor = len(SPECIAL_TOKENS) + len(required)
    if vocab_size < floor:
        raise DataError(
            f"vocab_size {vocab_size} is smaller than the character inventory "
            f"plus specials ({floor})"
        )
    secondary = {
        symbol for symbols in words for symbol in symbols if symbol not in required
    }
    uses: Counter = Counter(symbol for symbols in words for symbol in symbols)
    merged_pieces: List[str] = []
    known = set(required)
    size = floor + len(secondary)

    pair_counts: Counter = Counter()
    where: Dict[Tuple[str, str], set] = defaultdict(set)
    for idx, symbols in enumerate(words):
        for pair, n in _pairs_of(symbols).items():
            pair_counts[pair] += n * freqs[idx]
            where[pair].add(idx)

    while pair_counts:
        best = min(pair_counts, key=lambda p: (-pair_counts[p], p))
        if pair_counts[best] < min_freq:
            break
        merged = best[0] + best[1][len(CONTINUATION) :]
        updates = []
        delta: Counter = Counter()
        for idx in sorted(where.get(best, ())):
            old = words[idx]
            new = _merge_symbols(old, best, merged)
            if new != old:
                updates.append((idx, old, new))
                delta.subtract(old)
                delta.update(new)
        retired = sum(
            1 for s in secondary if uses[s] > 0 and uses[s] + delta[s] <= 0
        )
        grows = merged not in known
        after = size + int(grows) - retired
        fits = floor + len(merged_pieces) + int(grows) <= vocab_size
        if not fits or (after > vocab_size and after >= size):
            break

        where.pop(best, None)
        for idx, old, new in updates:
            for pair, n in _pairs_of(old).items():
                pair_counts[pair] -= n * freqs[idx]
                if pair_counts[pair] <= 0:
                    del pair_counts[pair]
                if pair != best:
                    where[pair].discard(idx)
            for pair, n in _pairs_of(new).items():
                pair_counts[pair] += n * freqs[idx]
                where[pair].add(idx)
            words[idx] = new
        uses.update(delta)
        pair_counts.pop(best, None)
        if grows:
            known.add(merged)
            merged_pieces.append(merged)
        size = after

    live = sorted(s for s in secondary if uses[s] > 0)
    idle = sorted(s for s in secondary if uses[s] <= 0)
    room = vocab_size - len(SPECIAL_TOKENS) - len(required) - len(merged_pieces)
    if len(live) > room:
        # keep the most used forms; words needing the rest encode as [UNK]
        live = sorted(sorted(live, key=lambda s: (-uses[s], s))[: max(room, 0)])
    kept = live + idle[: max(room - len(live), 0)]
    pieces = list(SPECIAL_TOKENS) + sorted(required | set(kept)) + merged_pieces

    logger.info(
        "Trained vocabulary: %d pieces (%d characters, %d distinct words)",
        len(pieces),
        len(chars),
        len(words),
    )
    return Vocab(pieces)


def encode_word(word: str, vocab: Vocab) -> List[int]:
    """Greedy longest-match-first segmentation; failure gives ``[UNK]``."""
    out: List[int] = []
    start = 0
    while start < len(word):
        end = len(word)
        found = None
        while start < end:
            piece = word[start:end]
            if start > 0:
                piece = CONTINUATION + piece
            if piece in vocab.index:
                found = vocab.index[piece]
                break
            end -= 1
        if found is None or len(out) >= MAX_PIECES_PER_WORD:
            return [UNK]
        out.append(found)
        start = end
    return out


def encode(text: str, lang: LangId, vocab: Vocab) -> TokenizedSentence:
    words = pretokenize(text)
    if not words:
        raise DataError("cannot encode an empty or whitespace-only sentence")
    piece_ids: List[int] = []
    spans: List[Tuple[int, int]] = []
    for word in words:
        ids = encode_word(word, vocab)
        spans.append((len(piece_ids), len(piece_ids) + len(ids)))
        piece_ids.extend(ids)
    return TokenizedSentence(words, piece_ids, spans, [lang] * len(words))


def decode(piece_ids: Iterable[int], vocab: Vocab) -> str:
    words: List[str] = []
    for pid in piece_ids:
        if not 0 <= pid < len(vocab):
            raise DataError(f"piece id {pid} out of range 0..{len(vocab) - 1}")
        if pid in (PAD, CLS, SEP, MASK):
            continue
        piece = vocab.pieces[pid]
        if piece.startswith(CONTINUATION) and words:
            words[-1] += piece[len(CONTINUATION) :]
        else:
            words.append(piece)
    return " ".join(words)
