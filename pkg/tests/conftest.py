import sys
from pathlib import Path

import numpy as np
import pytest

# Ensure project root is on sys.path for module imports
sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from src.config import ModelConfig  # noqa: E402
from src.corpus import Sentence  # noqa: E402
from src.lexicon import LanguageRegistry, merge, parse_muse  # noqa: E402
from src.model import init_params  # noqa: E402
from src.tokenizer import SPECIAL_TOKENS, Vocab  # noqa: E402

WORDS_PER_LANGUAGE = 100
COVERED_WORDS = 50


def word(code: str, index: int) -> str:
    """Surface of word ``index`` in fixture language ``code``: ``sa`` -> a007."""
    return f"{code[-1]}{index:03d}"


def sentence_text(code: str, indices) -> str:
    return " ".join(word(code, i) for i in indices)


@pytest.fixture
def registry():
    return LanguageRegistry(["sa", "sb", "sc"])


@pytest.fixture
def word_vocab():
    """One piece per fixture word, so every word encodes to exactly one id."""
    pieces = list(SPECIAL_TOKENS)
    for code in ("sa", "sb", "sc"):
        pieces += [word(code, i) for i in range(WORDS_PER_LANGUAGE)]
    return Vocab(pieces)


@pytest.fixture
def lexicon(registry):
    """Words 0..49 translate across sa/sb/sc; words 50..99 have no entry."""
    sa, sb, sc = (registry.get(code) for code in ("sa", "sb", "sc"))
    ab = [f"{word('sa', i)} {word('sb', i)}" for i in range(COVERED_WORDS)]
    ac = [f"{word('sa', i)} {word('sc', i)}" for i in range(COVERED_WORDS)]
    bc = [f"{word('sb', i)} {word('sc', i)}" for i in range(COVERED_WORDS)]
    return merge(
        [
            parse_muse(ab, sa, sb, source="sa-sb.txt"),
            parse_muse(ac, sa, sc, source="sa-sc.txt"),
            parse_muse(bc, sb, sc, source="sb-sc.txt"),
        ]
    )


@pytest.fixture
def tiny_model_cfg():
    return ModelConfig(
        vocab_size=40,
        hidden=16,
        layers=2,
        heads=2,
        ffn_dim=32,
        lang_count=3,
        max_positions=24,
        dropout=0.0,
    )


@pytest.fixture
def tiny_params(tiny_model_cfg):
    return init_params(tiny_model_cfg, np.random.default_rng(0))


@pytest.fixture
def make_sentence(registry):
    """Factory: ``make_sentence("sa", [0, 1])`` -> Sentence("a000 a001", sa)."""

    def factory(code: str, indices) -> Sentence:
        return Sentence(sentence_text(code, indices), registry.get(code))

    return factory
