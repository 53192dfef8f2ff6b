"""Monolingual corpora, temperature sampling and the sentence stream."""

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from itertools import islice
from typing import Iterator, List, Sequence

import numpy as np

from .config import SamplingPolicy
from .errors import ConfigError, DataError, Diagnostic, InvalidManifestError
from .lexicon import LangId, LanguageRegistry

logger = logging.getLogger(__name__)

COUNT_CACHE_SUFFIX = ".counts.json"


@dataclass(frozen=True)
class Sentence:
    text: str
    lang: LangId


@dataclass(frozen=True)
class ManifestEntry:
    lang: LangId
    path: str
    sentence_count: int


@dataclass
class CorpusManifest:
    entries: List[ManifestEntry]
    diagnostics: List[Diagnostic] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen = set()
        for entry in self.entries:
            if entry.sentence_count <= 0:
                raise InvalidManifestError(
                    f"{entry.path}: no usable sentences for {entry.lang.code}"
                )
            if entry.lang in seen:
                raise InvalidManifestError(
                    f"duplicate language {entry.lang.code} in manifest"
                )
            seen.add(entry.lang)

    @property
    def total_sentences(self) -> int:
        return sum(e.sentence_count for e in self.entries)

    @property
    def langs(self) -> List[LangId]:
        return [e.lang for e in self.entries]


def _iter_lines(path: str, diagnostics: List[Diagnostic] | None = None):
    """Yield non-blank decoded lines; undecodable lines become diagnostics."""
    with open(path, "rb") as f:
        for line_no, raw in enumerate(f, start=1):
            try:
                text = raw.decode("utf-8").strip()
            except UnicodeDecodeError as exc:
                diag = Diagnostic(path, line_no, f"invalid UTF-8: {exc.reason}")
                logger.warning("%s", diag)
                if diagnostics is not None:
                    diagnostics.append(diag)
                continue
            if text:
                yield text


def count_sentences(path: str) -> int:
    return sum(1 for _ in _iter_lines(path))


def _cached_count(path: str, cache: dict) -> int:
    stat = os.stat(path)
    key = os.path.abspath(path)
    hit = cache.get(key)
    if hit and hit["size"] == stat.st_size and hit["mtime_ns"] == stat.st_mtime_ns:
        return hit["count"]
    count = count_sentences(path)
    cache[key] = {"size": stat.st_size, "mtime_ns": stat.st_mtime_ns, "count": count}
    return count


def load_manifest(path: str, registry: LanguageRegistry) -> CorpusManifest:
    """Read a JSON list of ``{"lang", "path"}`` records.

    Relative corpus paths resolve against the manifest's directory; counts
    are cached next to the manifest.
    """
    with open(path, "r", encoding="utf-8") as f:
        records = json.load(f)
    if not isinstance(records, list):
        raise InvalidManifestError(f"{path}: manifest must be a JSON list")
    base = os.path.dirname(os.path.abspath(path))
    cache_path = path + COUNT_CACHE_SUFFIX
    cache: dict = {}
    if os.path.exists(cache_path):
        try:
            with open(cache_path, "r", encoding="utf-8") as f:
                cache = json.load(f)
        except Exception:  # pragma: no cover - corrupt cache
            cache = {}
    entries = []
    for i, record in enumerate(records):
        try:
            lang = registry.get(record["lang"])
            corpus_path = os.path.join(base, record["path"])
        except (KeyError, TypeError) as exc:
            raise InvalidManifestError(f"{path}: record {i} is malformed") from exc
        if not os.path.exists(corpus_path):
            raise DataError(f"{path}: record {i}: corpus file not found: {corpus_path}")
        count = _cached_count(corpus_path, cache)
        entries.append(ManifestEntry(lang, corpus_path, count))
    with open(cache_path, "w", encoding="utf-8") as f:
        json.dump(cache, f, ensure_ascii=False, indent=4)
    return CorpusManifest(entries)


def write_manifest(path: str, records: Sequence[dict]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(list(records), f, ensure_ascii=False, indent=4)


def iter_corpus(manifest: CorpusManifest) -> Iterator[Sentence]:
    """Every usable line of every corpus file once, in manifest order."""
    for entry in manifest.entries:
        for line in _iter_lines(entry.path, manifest.diagnostics):
            yield Sentence(line, entry.lang)


def temperature_weights(sizes: Sequence[int], temperature: float) -> np.ndarray:
    """p_l proportional to (n_l / sum n) ** (1 / T)."""
    if temperature < 1:
        raise ConfigError(f"sampling.temperature must be >= 1, got {temperature}")
    arr = np.asarray(sizes, dtype=np.float64)
    if arr.size == 0 or np.any(arr <= 0):
        raise InvalidManifestError(
            f"corpus sizes must all be positive, got {list(sizes)}"
        )
    q = arr / arr.sum()
    p = q ** (1.0 / temperature)
    return p / p.sum()


def sample_language(
    langs: Sequence[LangId], weights: np.ndarray, rng: np.random.Generator
) -> LangId:
    cdf = np.cumsum(weights)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return langs[min(idx, len(langs) - 1)]


def shard_seed(global_seed: int, shard_index: int) -> int:
    """64-bit seed for one shard, independent of how many workers run."""
    digest = hashlib.blake2b(
        f"{global_seed}:{shard_index}".encode("ascii"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def _cycle_file(path: str, diagnostics: List[Diagnostic]) -> Iterator[str]:
    while True:
        produced = False
        for line in _iter_lines(path, diagnostics):
            produced = True
            yield line
        if not produced:
            raise DataError(f"{path}: no usable sentences")
        # later epochs re-read the file; diagnostics are only kept once
        diagnostics = None  # type: ignore[assignment]


def sentence_stream(
    manifest: CorpusManifest,
    policy: SamplingPolicy,
    limit: int | None = None,
    shard_index: int = 0,
) -> Iterator[Sentence]:
    """Interleave languages by temperature sampling; each file cycles in order.

    ``limit=None`` gives an endless stream.
    """
    for entry in manifest.entries:
        if not os.access(entry.path, os.R_OK):
            raise DataError(f"cannot read corpus file {entry.path}")
    seed = shard_seed(policy.seed or 0, shard_index)
    rng = np.random.default_rng(seed)
    langs = manifest.langs
    weights = temperature_weights(
        [e.sentence_count for e in manifest.entries], policy.temperature
    )
    logger.debug(
        "Language weights at T=%s: %s",
        policy.temperature,
        {lang.code: round(float(w), 4) for lang, w in zip(langs, weights)},
    )
    readers = {
        entry.lang: _cycle_file(entry.path, manifest.diagnostics)
        for entry in manifest.entries
    }

    def generate() -> Iterator[Sentence]:
        while True:
            lang = sample_language(langs, weights, rng)
            yield Sentence(next(readers[lang]), lang)

    return islice(generate(), limit) if limit is not None else generate()
