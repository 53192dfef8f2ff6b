"""Cross-lingual retrieval evaluation and pipeline statistics reports."""

import csv
import logging
import os
from dataclasses import dataclass
from typing import Annotated, Dict, Iterable, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from .errors import DataError
from .lexicon import LangId, LanguageRegistry
from .model import ModelParams, embed_sentences
from .stats import MaskingStats, write_json
from .tokenizer import Vocab

logger = logging.getLogger(__name__)

LAST_LAYERS = 4


@dataclass(frozen=True)
class ParallelPair:
    src: Tuple[str, LangId]
    tgt: Tuple[str, LangId]

    def __post_init__(self) -> None:
        if self.src[1] == self.tgt[1]:
            raise DataError(
                f"parallel pair languages must differ, both are {self.src[1].code}"
            )


def _parent(path: str) -> None:
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)


def load_pairs(path: str, registry: LanguageRegistry) -> List[ParallelPair]:
    """Read ``src_code<TAB>tgt_code`` then ``src_text<TAB>tgt_text`` lines."""
    with open(path, "r", encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f]
    if not lines:
        raise DataError(f"{path}: empty pairs file")
    header = lines[0].split("\t")
    if len(header) != 2:
        raise DataError(f"{path}:1: header must be 'src_code<TAB>tgt_code'")
    src, tgt = registry.get(header[0].strip()), registry.get(header[1].strip())
    pairs = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 2 or not cols[0].strip() or not cols[1].strip():
            raise DataError(f"{path}:{line_no}: expected 2 tab-separated sentences")
        pairs.append(ParallelPair((cols[0], src), (cols[1], tgt)))
    if not pairs:
        raise DataError(f"{path}: no sentence pairs")
    return pairs


def write_pairs(path: str, pairs: Sequence[ParallelPair]) -> None:
    if not pairs:
        raise DataError(f"{path}: refusing to write an empty pairs file")
    _parent(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{pairs[0].src[1].code}\t{pairs[0].tgt[1].code}\n")
        for pair in pairs:
            f.write(f"{pair.src[0]}\t{pair.tgt[0]}\n")


def retrieval_accuracy(src_vecs: np.ndarray, tgt_vecs: np.ndarray) -> float:
    """Accuracy@1 of src→tgt cosine nearest neighbour; ties go to the lowest index."""
    src_vecs = np.asarray(src_vecs, dtype=np.float64)
    tgt_vecs = np.asarray(tgt_vecs, dtype=np.float64)
    if src_vecs.ndim != 2 or src_vecs.shape != tgt_vecs.shape or not len(src_vecs):
        raise DataError(
            f"retrieval needs equal, non-empty [n×H] inputs; got {src_vecs.shape} "
            f"and {tgt_vecs.shape}"
        )
    normalized = []
    for side, vecs in (("source", src_vecs), ("target", tgt_vecs)):
        norms = np.linalg.norm(vecs, axis=1)
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise DataError(f"{side} sentence {int(zero[0])} has a zero embedding")
        normalized.append(vecs / norms[:, None])
    sims = normalized[0] @ normalized[1].T
    hits = np.argmax(sims, axis=1) == np.arange(len(sims))
    return float(hits.mean())


class RetrievalReport(BaseModel):
    per_layer_acc: List[Annotated[float, Field(ge=0.0, le=1.0)]]
    last4_avg: Annotated[float, Field(ge=0.0, le=1.0)]
    pair_count: Annotated[int, Field(ge=1)]

    @classmethod
    def from_accuracies(
        cls, accuracies: Sequence[float], pair_count: int
    ) -> "RetrievalReport":
        tail = list(accuracies)[-LAST_LAYERS:]
        return cls(
            per_layer_acc=list(accuracies),
            last4_avg=sum(tail) / len(tail),
            pair_count=pair_count,
        )


def _embed_side(
    side: Sequence[Tuple[str, LangId]],
    params: ModelParams,
    vocab: Vocab,
    workers: int,
) -> np.ndarray:
    """``[layers, n, H]`` embeddings, each sentence with its own language id."""
    by_lang: Dict[LangId, List[int]] = {}
    for i, (_, lang) in enumerate(side):
        by_lang.setdefault(lang, []).append(i)
    out = np.zeros((params.cfg.layers + 1, len(side), params.cfg.hidden))
    for lang in sorted(by_lang):
        idx = by_lang[lang]
        out[:, idx, :] = embed_sentences(
            [side[i][0] for i in idx], lang, params, vocab, workers=workers
        )
    return out


def layerwise_report(
    params: ModelParams,
    pairs: Sequence[ParallelPair],
    vocab: Vocab,
    workers: int = 1,
) -> RetrievalReport:
    if not pairs:
        raise DataError("layerwise_report needs at least one sentence pair")
    src = _embed_side([p.src for p in pairs], params, vocab, workers)
    tgt = _embed_side([p.tgt for p in pairs], params, vocab, workers)
    accuracies = [
        retrieval_accuracy(src[layer], tgt[layer]) for layer in range(len(src))
    ]
    report = RetrievalReport.from_accuracies(accuracies, len(pairs))
    logger.info(
        "Retrieval over %d pairs: last-4 average %.4f", len(pairs), report.last4_avg
    )
    return report


def write_report(report: RetrievalReport, csv_path: str, json_path: str) -> None:
    _parent(csv_path)
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["layer", "accuracy"])
        for layer, acc in enumerate(report.per_layer_acc):
            writer.writerow([layer, repr(acc)])
    write_json(json_path, report.model_dump())


def masking_stats_report(
    examples: Iterable, registry: LanguageRegistry | None = None
) -> dict:
    """Masked-word rate, corruption split and cross-lingual label fractions."""
    stats = MaskingStats()
    for example in examples:
        stats.update(example, registry)
    return stats.to_dict()


def summarize_runs(runs: Sequence[Tuple[str, int, float]]) -> List[Tuple[str, float]]:
    """Mean ``last4_avg`` per model, in first-seen model order."""
    grouped: Dict[str, List[float]] = {}
    for model, _seed, score in runs:
        grouped.setdefault(model, []).append(score)
    return [(model, sum(s) / len(s)) for model, s in grouped.items()]


def write_compare(
    out_dir: str, runs: Sequence[Tuple[str, int, float]]
) -> Tuple[str, str]:
    """Write per-run ``runs.csv`` and per-model ``summary.csv``."""
    os.makedirs(out_dir, exist_ok=True)
    runs_path = os.path.join(out_dir, "runs.csv")
    summary_path = os.path.join(out_dir, "summary.csv")
    with open(runs_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["model", "seed", "last4_avg"])
        for model, seed, score in runs:
            writer.writerow([model, seed, repr(score)])
    with open(summary_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["model", "last4_avg"])
        for model, score in summarize_runs(runs):
            writer.writerow([model, repr(score)])
    return runs_path, summary_path
