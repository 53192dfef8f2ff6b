import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Dict, List

from .errors import Diagnostic
from .tokenizer import MASK

if TYPE_CHECKING:  # pragma: no cover - used for type hints only
    from .examplegen import TrainingExample
    from .lexicon import LanguageRegistry

logger = logging.getLogger(__name__)


@dataclass
class LanguageStats:
    """Per-language counters."""

    examples: int = 0
    words: int = 0
    masked_words: int = 0
    xling_words: int = 0

    @classmethod
    def from_dict(cls, data: dict | None) -> "LanguageStats":
        data = data or {}
        return cls(
            examples=data.get("examples", 0),
            words=data.get("words", 0),
            masked_words=data.get("masked_words", 0),
            xling_words=data.get("xling_words", 0),
        )

    def add(self, other: "LanguageStats") -> None:
        self.examples += other.examples
        self.words += other.words
        self.masked_words += other.masked_words
        self.xling_words += other.xling_words

    def to_dict(self) -> dict:
        data = asdict(self)
        data["masked_word_rate"] = _ratio(self.masked_words, self.words)
        data["xling_frac"] = _ratio(self.xling_words, self.masked_words)
        return data


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _infer_branches(example: "TrainingExample") -> str:
    """Read the corruption off the tokens for examples that do not record it."""
    out = []
    for pos, label in zip(example.masked_positions, example.label_ids):
        token = example.token_ids[pos]
        out.append("m" if token == MASK else "k" if token == label else "r")
    return "".join(out)


@dataclass
class MaskingStats:
    """Counters over a stream of training examples.

    Counts merge associatively, so shards can be summed in any grouping.
    """

    examples: int = 0
    words: int = 0
    masked_words: int = 0
    xling_words: int = 0
    masked_pieces: int = 0
    corrupt_mask: int = 0
    corrupt_keep: int = 0
    corrupt_random: int = 0
    per_language: Dict[str, LanguageStats] = field(default_factory=dict)
    label_languages: Dict[str, int] = field(default_factory=dict)

    def update(
        self, example: "TrainingExample", registry: "LanguageRegistry | None" = None
    ) -> None:
        def code(lang_id: int) -> str:
            return registry.by_id(lang_id).code if registry else str(lang_id)

        self.examples += 1
        self.words += example.word_count
        self.masked_words += example.masked_word_count
        self.xling_words += example.xling_word_count
        self.masked_pieces += len(example.masked_positions)
        branches = example.corruption or _infer_branches(example)
        self.corrupt_mask += branches.count("m")
        self.corrupt_keep += branches.count("k")
        self.corrupt_random += branches.count("r")
        for lang_id in example.label_lang_ids:
            key = code(lang_id)
            self.label_languages[key] = self.label_languages.get(key, 0) + 1
        lang = self.per_language.setdefault(
            code(example.source_lang), LanguageStats()
        )
        lang.add(
            LanguageStats(
                1,
                example.word_count,
                example.masked_word_count,
                example.xling_word_count,
            )
        )

    def merge(self, other: "MaskingStats") -> "MaskingStats":
        merged = MaskingStats.from_dict(self.to_dict())
        for name in (
            "examples",
            "words",
            "masked_words",
            "xling_words",
            "masked_pieces",
            "corrupt_mask",
            "corrupt_keep",
            "corrupt_random",
        ):
            setattr(merged, name, getattr(merged, name) + getattr(other, name))
        for code, lang in other.per_language.items():
            merged.per_language.setdefault(code, LanguageStats()).add(lang)
        for code, n in other.label_languages.items():
            merged.label_languages[code] = merged.label_languages.get(code, 0) + n
        return merged

    @property
    def masked_word_rate(self) -> float:
        return _ratio(self.masked_words, self.words)

    @property
    def xling_frac(self) -> float:
        return _ratio(self.xling_words, self.masked_words)

    @property
    def corruption_split(self) -> Dict[str, float]:
        return {
            "mask": _ratio(self.corrupt_mask, self.masked_pieces),
            "keep": _ratio(self.corrupt_keep, self.masked_pieces),
            "random": _ratio(self.corrupt_random, self.masked_pieces),
        }

    @classmethod
    def from_dict(cls, data: dict | None) -> "MaskingStats":
        data = data or {}
        counts = data.get("counts", {})
        return cls(
            examples=counts.get("examples", 0),
            words=counts.get("words", 0),
            masked_words=counts.get("masked_words", 0),
            xling_words=counts.get("xling_words", 0),
            masked_pieces=counts.get("masked_pieces", 0),
            corrupt_mask=counts.get("corrupt_mask", 0),
            corrupt_keep=counts.get("corrupt_keep", 0),
            corrupt_random=counts.get("corrupt_random", 0),
            per_language={
                code: LanguageStats.from_dict(v)
                for code, v in data.get("per_language", {}).items()
            },
            label_languages=dict(data.get("label_languages", {})),
        )

    def to_dict(self) -> dict:
        return {
            "example_count": self.examples,
            "masked_word_rate": self.masked_word_rate,
            "xling_frac": self.xling_frac,
            "corruption": self.corruption_split,
            "label_languages": dict(sorted(self.label_languages.items())),
            "per_language": {
                code: lang.to_dict() for code, lang in sorted(self.per_language.items())
            },
            "counts": {
                "examples": self.examples,
                "words": self.words,
                "masked_words": self.masked_words,
                "xling_words": self.xling_words,
                "masked_pieces": self.masked_pieces,
                "corrupt_mask": self.corrupt_mask,
                "corrupt_keep": self.corrupt_keep,
                "corrupt_random": self.corrupt_random,
            },
        }


@dataclass
class GenStats(MaskingStats):
    """Masking counters plus what generation skipped."""

    sentences: int = 0
    skipped: int = 0
    diagnostics: List[Diagnostic] = field(default_factory=list)

    def skip(self, diag: Diagnostic) -> None:
        self.skipped += 1
        self.diagnostics.append(diag)
        logger.warning("Skipped: %s", diag)

    def to_dict(self) -> dict:
        data = super().to_dict()
        data["sentences"] = self.sentences
        data["skipped"] = self.skipped
        data["diagnostics"] = [str(d) for d in self.diagnostics]
        return data


def write_json(path: str, data: dict) -> None:
    """Write a report/sidecar JSON file deterministically."""
    logger.debug("Writing %s", path)
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, ensure_ascii=False, indent=4, sort_keys=True)
        f.write("\n")
