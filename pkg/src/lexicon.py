"""Multilingual synonym lexicon built from MUSE bilingual dictionaries."""

import json
import logging
import os
import re
import unicodedata
from collections import defaultdict
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Dict, Iterable, Iterator, List, Mapping, Sequence, Set, Tuple

import numpy as np

from .errors import DataError, Diagnostic

logger = logging.getLogger(__name__)

PAIR_FILENAME = re.compile(r"^([a-z]{2,3})-([a-z]{2,3})(?:\.[^/]*)?\.txt$")


@dataclass(frozen=True, order=True)
class LangId:
    """Dense language id plus its ISO-style code."""

    id: int
    code: str


class LanguageRegistry:
    """Bijection between language codes and dense ids 0..L-1."""

    def __init__(self, codes: Iterable[str] = ()) -> None:
        self._langs: List[LangId] = []
        self._by_code: Dict[str, LangId] = {}
        for code in codes:
            self.register(code)

    def register(self, code: str) -> LangId:
        if code in self._by_code:
            return self._by_code[code]
        lang = LangId(len(self._langs), code)
        self._langs.append(lang)
        self._by_code[code] = lang
        return lang

    def get(self, code: str) -> LangId:
        try:
            return self._by_code[code]
        except KeyError:
            raise DataError(
                f"unknown language code {code!r}; registered: "
                f"{', '.join(self.codes) or '(none)'}"
            ) from None

    def by_id(self, lang_id: int) -> LangId:
        if not 0 <= lang_id < len(self._langs):
            raise DataError(f"language id {lang_id} out of range 0..{len(self) - 1}")
        return self._langs[lang_id]

    @property
    def codes(self) -> List[str]:
        return [lang.code for lang in self._langs]

    def __len__(self) -> int:
        return len(self._langs)

    def __iter__(self) -> Iterator[LangId]:
        return iter(self._langs)

    def __contains__(self, code: str) -> bool:
        return code in self._by_code


@dataclass(frozen=True)
class SynonymEntry:
    word: str
    lang: LangId

    def __post_init__(self) -> None:
        if not self.word or any(ch.isspace() for ch in self.word):
            raise DataError(f"invalid dictionary word {self.word!r}")

    @property
    def sort_key(self) -> Tuple[str, str]:
        return (self.lang.code, self.word)


@dataclass
class MuseFile:
    """Result of parsing one MUSE dictionary file."""

    src: LangId
    tgt: LangId
    pairs: List[Tuple[str, SynonymEntry]] = field(default_factory=list)
    diagnostics: List[Diagnostic] = field(default_factory=list)


def normalize(word: str, lowercase: bool = True) -> str:
    word = unicodedata.normalize("NFC", word)
    return word.lower() if lowercase else word


def parse_muse(
    content: Iterable[str],
    src: LangId,
    tgt: LangId,
    *,
    source: str = "<stream>",
    lowercase: bool = True,
) -> MuseFile:
    """Parse ``src tgt`` lines; malformed lines become diagnostics."""
    parsed = MuseFile(src=src, tgt=tgt)
    for line_no, line in enumerate(content, start=1):
        fields_ = line.split()
        if not fields_:
            continue
        if len(fields_) != 2:
            diag = Diagnostic(
                source, line_no, f"expected 2 fields, got {len(fields_)}"
            )
            parsed.diagnostics.append(diag)
            logger.warning("%s", diag)
            continue
        word, synonym = (normalize(f, lowercase) for f in fields_)
        parsed.pairs.append((word, SynonymEntry(synonym, tgt)))
    return parsed


def pair_from_filename(path: str) -> Tuple[str, str]:
    """Return ``(src, tgt)`` codes from a ``xx-yy.txt`` style file name."""
    match = PAIR_FILENAME.match(os.path.basename(path))
    if not match:
        raise DataError(
            f"{path}: cannot infer language pair; name the file like 'xx-yy.txt' "
            "or pass the pair explicitly"
        )
    return match.group(1), match.group(2)


def read_muse_file(
    path: str,
    registry: LanguageRegistry,
    pair: Tuple[str, str] | None = None,
    lowercase: bool = True,
) -> MuseFile:
    src_code, tgt_code = pair or pair_from_filename(path)
    src, tgt = registry.get(src_code), registry.get(tgt_code)
    with open(path, "r", encoding="utf-8") as f:
        parsed = parse_muse(f, src, tgt, source=path, lowercase=lowercase)
    logger.debug(
        "Parsed %s: %d pairs, %d diagnostics",
        path,
        len(parsed.pairs),
        len(parsed.diagnostics),
    )
    return parsed


Key = Tuple[str, LangId]


class Lexicon:
    """Aggregated (word, lang) -> synonyms map; read-only after merge."""

    def __init__(
        self,
        entries: Mapping[Key, Sequence[SynonymEntry]] | None = None,
        source_count: int = 0,
        lowercase: bool = True,
    ) -> None:
        frozen = {
            key: tuple(sorted(set(syns), key=lambda s: s.sort_key))
            for key, syns in (entries or {}).items()
            if syns
        }
        self.entries: Mapping[Key, Tuple[SynonymEntry, ...]] = MappingProxyType(
            frozen
        )
        self.source_count = source_count
        self.lowercase = lowercase
        self._languages = {lang for (_, lang) in frozen}

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Lexicon):
            return NotImplemented
        return dict(self.entries) == dict(other.entries)

    def has_language(self, lang: LangId) -> bool:
        return lang in self._languages

    def keyed_pairs(self) -> List[Tuple[Key, SynonymEntry]]:
        return [
            ((word, lang), syn)
            for (word, lang), syns in self.entries.items()
            for syn in syns
        ]


def merge(
    pair_lists: Iterable, symmetrize: bool = True, lowercase: bool = True
) -> Lexicon:
    """Aggregate parsed dictionaries (or lexicons) into one Lexicon."""
    table: Dict[Key, Set[SynonymEntry]] = defaultdict(set)
    count = 0

    def add(key: Key, syn: SynonymEntry) -> None:
        if (syn.word, syn.lang) == key:
            return
        table[key].add(syn)
        if symmetrize:
            back = (syn.word, syn.lang)
            table[back].add(SynonymEntry(key[0], key[1]))

    for item in pair_lists:
        count += 1
        if isinstance(item, MuseFile):
            for word, syn in item.pairs:
                add((word, item.src), syn)
        elif isinstance(item, Lexicon):
            for key, syn in item.keyed_pairs():
                add(key, syn)
        else:
            for key, syn in item:
                add(key, syn)
    lex = Lexicon(table, source_count=count, lowercase=lowercase)
    logger.info("Merged %d dictionaries into %d lexicon entries", count, len(lex))
    return lex


def lookup(word: str, lang: LangId, lex: Lexicon) -> Tuple[SynonymEntry, ...]:
    return lex.entries.get((normalize(word, lex.lowercase), lang), ())


def sample_synonym(
    word: str,
    lang: LangId,
    lex: Lexicon,
    rng: np.random.Generator,
    strategy: str = "per_language",
) -> SynonymEntry | None:
    """Draw one synonym.

    ``per_language`` picks a language uniformly among those present, then a
    word uniformly within it; ``flat`` picks uniformly over all synonyms.
    """
    syns = lookup(word, lang, lex)
    if not syns:
        return None
    if strategy == "flat":
        return syns[int(rng.integers(len(syns)))]
    by_lang: Dict[str, List[SynonymEntry]] = {}
    for syn in syns:
        by_lang.setdefault(syn.lang.code, []).append(syn)
    codes = sorted(by_lang)
    group = by_lang[codes[int(rng.integers(len(codes)))]]
    return group[int(rng.integers(len(group)))]


@dataclass
class CoverageReport:
    fraction: float
    covered: int
    total: int
    per_language: Dict[str, float]
    empty: bool = False

    def to_dict(self) -> dict:
        return {
            "fraction": self.fraction,
            "covered": self.covered,
            "total": self.total,
            "per_language": dict(sorted(self.per_language.items())),
            "empty": self.empty,
        }


def coverage(
    corpus_iter: Iterable[Tuple[Sequence[str], LangId]], lex: Lexicon
) -> CoverageReport:
    """Fraction of whole-word tokens that have at least one synonym."""
    covered: Dict[str, int] = defaultdict(int)
    totals: Dict[str, int] = defaultdict(int)
    for words, lang in corpus_iter:
        for word in words:
            totals[lang.code] += 1
            if lookup(word, lang, lex):
                covered[lang.code] += 1
    total = sum(totals.values())
    if total == 0:
        logger.warning("Coverage requested for an empty corpus; reporting 0")
        return CoverageReport(0.0, 0, 0, {}, empty=True)
    hit = sum(covered.values())
    per_language = {code: covered[code] / n for code, n in totals.items()}
    return CoverageReport(hit / total, hit, total, per_language)


def save_lexicon(lex: Lexicon, path: str) -> None:
    """Write one JSON record per key, synonyms sorted by (lang, word)."""
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)
    keys = sorted(lex.entries, key=lambda k: (k[1].code, k[0]))
    with open(path, "w", encoding="utf-8") as f:
        for word, lang in keys:
            record = {
                "word": word,
                "lang": lang.code,
                "synonyms": [
                    {"word": s.word, "lang": s.lang.code}
                    for s in lex.entries[(word, lang)]
                ],
            }
            f.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_lexicon(
    path: str, registry: LanguageRegistry, lowercase: bool = True
) -> Lexicon:
    entries: Dict[Key, List[SynonymEntry]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                key = (record["word"], registry.get(record["lang"]))
                entries[key] = [
                    SynonymEntry(s["word"], registry.get(s["lang"]))
                    for s in record["synonyms"]
                ]
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise DataError(f"{path}:{line_no}: bad lexicon record: {exc}") from exc
    return Lexicon(entries, source_count=1, lowercase=lowercase)
