"""Artificial language pairs with exact dictionaries and parallel text.

Every language renders the same lemma inventory. Lemma ``k`` starts as a
string of consonant-vowel syllables (``k`` written in base 75, at least two
syllables) and is then passed through the language's transform chain:

* ``suffix:<syllable>`` appends a syllable (the ``near`` preset),
* ``script:latin|greek|cyrillic`` maps each letter to another alphabet (the
  ``far`` preset),
* ``truncate:<n>`` keeps the first ``n`` characters.

Transforms are comma-separated and applied left to right.
"""

import logging
import os
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from .config import SynthConfig
from .corpus import write_manifest
from .errors import SynthError
from .evalsuite import ParallelPair, write_pairs
from .lexicon import LangId, LanguageRegistry
from .stats import write_json

logger = logging.getLogger(__name__)

CONSONANTS = "ptkbdgmnslrvfzh"
VOWELS = "aeiou"
SYLLABLES = [c + v for c in CONSONANTS for v in VOWELS]
MIN_SYLLABLES = 2
NEAR_SUFFIXES = ["ka", "lo", "mu", "ri", "se", "tu", "ne", "vi"]
SCRIPT_ORDER = ["latin", "greek", "cyrillic"]
SCRIPTS = {
    "latin": {},
    "greek": dict(zip(CONSONANTS + VOWELS, "πτκβδγμνσλρψφζχαειου")),
    "cyrillic": dict(zip(CONSONANTS + VOWELS, "пткбдгмнслрвфзхаеиоу")),
}

TAG_COVERAGE, TAG_CORPUS, TAG_PARALLEL = 0, 1, 2


def lemma_base(k: int) -> str:
    """Consonant-vowel spelling of lemma ``k``; distinct for distinct ``k``."""
    if k < 0:
        raise SynthError(f"lemma index must be >= 0, got {k}")
    digits = []
    while k:
        k, d = divmod(k, len(SYLLABLES))
        digits.append(d)
    digits += [0] * (MIN_SYLLABLES - len(digits))
    return "".join(SYLLABLES[d] for d in reversed(digits))


def parse_transform(spec: str) -> Callable[[str], str]:
    steps: List[Callable[[str], str]] = []
    for part in filter(None, (p.strip() for p in spec.split(","))):
        kind, _, arg = part.partition(":")
        if kind == "suffix":
            steps.append(lambda w, s=arg: w + s)
        elif kind == "script":
            if arg not in SCRIPTS:
                raise SynthError(
                    f"unknown script {arg!r} in transform {spec!r}; "
                    f"choose from {', '.join(SCRIPTS)}"
                )
            table = str.maketrans(SCRIPTS[arg])
            steps.append(lambda w, t=table: w.translate(t))
        elif kind == "truncate":
            try:
                n = int(arg)
            except ValueError:
                raise SynthError(f"truncate needs an integer in {spec!r}") from None
            steps.append(lambda w, n=n: w[:n])
        else:
            raise SynthError(f"unknown transform {part!r} in {spec!r}")

    def apply(word: str) -> str:
        for step in steps:
            word = step(word)
        return word

    return apply


def default_transforms(preset: str, count: int) -> List[str]:
    if preset == "near":
        return [f"suffix:{NEAR_SUFFIXES[i % len(NEAR_SUFFIXES)]}" for i in range(count)]
    out = []
    for i in range(count):
        spec = f"script:{SCRIPT_ORDER[i % len(SCRIPT_ORDER)]}"
        if i >= len(SCRIPT_ORDER):
            spec += f",suffix:{NEAR_SUFFIXES[i % len(NEAR_SUFFIXES)]}"
        out.append(spec)
    return out


@dataclass
class SynthLanguage:
    lang: LangId
    transform: str
    surfaces: List[str]

    def render(self, lemmas: Sequence[int]) -> str:
        return " ".join(self.surfaces[k] for k in lemmas)


@dataclass
class SynthWorld:
    """Rendered languages plus the lemma distribution and dictionary coverage."""

    languages: List[SynthLanguage]
    weights: np.ndarray
    covered: np.ndarray
    dictionaries: Dict[Tuple[str, str], List[Tuple[str, str]]] = field(
        default_factory=dict
    )

    def language(self, code: str) -> SynthLanguage:
        for lang in self.languages:
            if lang.lang.code == code:
                return lang
        raise SynthError(f"language {code!r} is not part of this synthetic world")

    @property
    def covered_mass(self) -> float:
        return float(self.weights[self.covered].sum())


def zipf_weights(n: int, s: float) -> np.ndarray:
    """p_k proportional to (k + 1) ** -s for lemma ranks 0..n-1."""
    ranks = np.arange(1, n + 1, dtype=np.float64)
    p = ranks**-s
    return p / p.sum()


def covered_lemmas(
    weights: np.ndarray, coverage: float, rng: np.random.Generator
) -> np.ndarray:
    """Pick lemmas in random order until their token mass reaches ``coverage``."""
    covered = np.zeros(len(weights), dtype=bool)
    if coverage >= 1:
        covered[:] = True
        return covered
    mass = 0.0
    for k in rng.permutation(len(weights)):
        if mass + weights[k] <= coverage:
            covered[k] = True
            mass += weights[k]
    return covered


def _rng(cfg: SynthConfig, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed or 0, *tags]))


def gen_languages(cfg: SynthConfig, registry: LanguageRegistry) -> SynthWorld:
    transforms = cfg.transforms or default_transforms(cfg.preset, len(cfg.languages))
    bases = [lemma_base(k) for k in range(cfg.lemma_count)]
    languages = []
    for code, spec in zip(cfg.languages, transforms):
        render = parse_transform(spec)
        surfaces = [render(b) for b in bases]
        seen: Dict[str, int] = {}
        for k, surface in enumerate(surfaces):
            if not surface:
                raise SynthError(f"{code}: transform {spec!r} erases lemma {k}")
            if surface in seen:
                raise SynthError(
                    f"{code}: transform {spec!r} renders lemmas {seen[surface]} and "
                    f"{k} both as {surface!r}"
                )
            seen[surface] = k
        languages.append(SynthLanguage(registry.get(code), spec, surfaces))

    weights = zipf_weights(cfg.lemma_count, cfg.zipf_s)
    covered = covered_lemmas(weights, cfg.coverage, _rng(cfg, TAG_COVERAGE))
    world = SynthWorld(languages, weights, covered)
    for a, b in combinations(languages, 2):
        world.dictionaries[(a.lang.code, b.lang.code)] = [
            (a.surfaces[k], b.surfaces[k])
            for k in range(cfg.lemma_count)
            if covered[k]
        ]
    logger.info(
        "Synthesized %d languages, %d lemmas, %d covered (token mass %.3f)",
        len(languages),
        cfg.lemma_count,
        int(covered.sum()),
        world.covered_mass,
    )
    return world


def sample_lemma_sentence(
    world: SynthWorld, cfg: SynthConfig, rng: np.random.Generator
) -> List[int]:
    length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
    draws = rng.choice(len(world.weights), size=length, p=world.weights)
    return [int(k) for k in draws]


def gen_corpus(world: SynthWorld, cfg: SynthConfig, code: str) -> List[str]:
    index = cfg.languages.index(code)
    lang = world.language(code)
    rng = _rng(cfg, TAG_CORPUS, index)
    return [
        lang.render(sample_lemma_sentence(world, cfg, rng))
        for _ in range(cfg.corpus_sentences)
    ]


def gen_parallel(
    world: SynthWorld, cfg: SynthConfig, src: str, tgt: str
) -> List[ParallelPair]:
    """Distinct lemma sequences rendered in both languages."""
    a, b = world.language(src), world.language(tgt)
    rng = _rng(cfg, TAG_PARALLEL, cfg.languages.index(src), cfg.languages.index(tgt))
    seen = set()
    pairs = []
    attempts = 0
    while len(pairs) < cfg.pair_count:
        attempts += 1
        if attempts > 100 * cfg.pair_count:
            raise SynthError(
                f"could not draw {cfg.pair_count} distinct sentences; "
                "raise lemma_count or sentence length"
            )
        lemmas = tuple(sample_lemma_sentence(world, cfg, rng))
        if lemmas in seen:
            continue
        seen.add(lemmas)
        pairs.append(
            ParallelPair((a.render(lemmas), a.lang), (b.render(lemmas), b.lang))
        )
    return pairs


def write_dictionaries(world: SynthWorld, out_dir: str) -> List[str]:
    """One MUSE ``xx-yy.txt`` file per language pair."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for (src, tgt), entries in world.dictionaries.items():
        path = os.path.join(out_dir, f"{src}-{tgt}.txt")
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for left, right in entries:
                f.write(f"{left} {right}\n")
        paths.append(path)
    return paths


@dataclass
class SynthOutput:
    dictionaries: List[str]
    manifest: str
    corpora: List[str]
    pairs: List[str]


def generate_all(
    cfg: SynthConfig, registry: LanguageRegistry, out_dir: str
) -> SynthOutput:
    """Write dictionaries, corpora + manifest and evaluation pairs under ``out_dir``."""
    if len(cfg.languages) < 2:
        raise SynthError("synth needs at least two languages")
    world = gen_languages(cfg, registry)
    dict_dir = os.path.join(out_dir, "dicts")
    corpus_dir = os.path.join(out_dir, "corpus")
    eval_dir = os.path.join(out_dir, "eval")
    dictionaries = write_dictionaries(world, dict_dir)

    os.makedirs(corpus_dir, exist_ok=True)
    corpora, records = [], []
    for code in cfg.languages:
        path = os.path.join(corpus_dir, f"{code}.txt")
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for sentence in gen_corpus(world, cfg, code):
                f.write(sentence + "\n")
        corpora.append(path)
        records.append({"lang": code, "path": f"{code}.txt"})
    manifest = os.path.join(corpus_dir, "manifest.json")
    write_manifest(manifest, records)

    pairs = []
    for src, tgt in combinations(cfg.languages, 2):
        path = os.path.join(eval_dir, f"{src}-{tgt}.tsv")
        write_pairs(path, gen_parallel(world, cfg, src, tgt))
        pairs.append(path)

    write_json(
        os.path.join(out_dir, "synth.json"),
        {
            "seed": cfg.seed,
            "synth": {
                **{k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
                "transforms": [lang.transform for lang in world.languages],
            },
            "covered_lemmas": int(world.covered.sum()),
            "covered_mass": world.covered_mass,
        },
    )
    logger.info("Synthetic data written to %s", out_dir)
    return SynthOutput(dictionaries, manifest, corpora, pairs)
