"""Pipeline stages behind the command-line subcommands."""

import logging
import os
from dataclasses import asdict, dataclass, replace
from typing import List, Sequence, Tuple

import numpy as np

from . import evalsuite, synthlang
from .config import RunConfig
from .corpus import iter_corpus, load_manifest, sentence_stream
from .errors import ConfigError, DataError
from .examplegen import generate, read_examples, write_examples
from .lexicon import (
    Lexicon,
    LanguageRegistry,
    coverage,
    load_lexicon,
    merge,
    read_muse_file,
    save_lexicon,
)
from .model import init_params, load_checkpoint
from .stats import write_json
from .tokenizer import Vocab, pretokenize, train_vocab
from .trainer import train

logger = logging.getLogger(__name__)

DEFAULT_VOCAB_SIZE = 4000


@dataclass(frozen=True)
class ModelVariant:
    """How one compared model differs from the run config."""

    mode: str
    t: float | None = None
    conditioning: bool | None = None


MODEL_VARIANTS = {
    "dict_mlm": ModelVariant("dict_mlm"),
    "dict_mlm_70": ModelVariant("dict_mlm", t=0.7),
    "dict_mlm_90": ModelVariant("dict_mlm", t=0.9),
    "dict_tlm": ModelVariant("dict_tlm"),
    "vanilla_mlm": ModelVariant("vanilla_mlm"),
    "dict_mlm_no_conditioning": ModelVariant("dict_mlm", conditioning=False),
}
COMPARE_MODELS = ("dict_mlm", "vanilla_mlm")
ABLATION_MODEL = "dict_mlm_no_conditioning"


def setup_logging(level: str = "info") -> None:
    """Configure logging for the application."""
    numeric_level = getattr(logging, level.upper(), logging.INFO)
    logging.basicConfig(level=numeric_level, format="%(levelname)s - %(message)s")


def registry_for(cfg: RunConfig) -> LanguageRegistry:
    return LanguageRegistry(cfg.languages)


def provenance(cfg: RunConfig, *sections: str) -> dict:
    """Seed and config sections an output was produced with."""
    data = {"seed": cfg.seed, "languages": list(cfg.languages)}
    for name in sections:
        data[name] = asdict(getattr(cfg, name))
    return data


def run_merge_dicts(cfg: RunConfig, inputs: Sequence[str], out: str) -> Lexicon:
    registry = registry_for(cfg)
    parsed = [
        read_muse_file(path, registry, lowercase=cfg.lexicon.lowercase)
        for path in inputs
    ]
    lex = merge(
        parsed, symmetrize=cfg.lexicon.symmetrize, lowercase=cfg.lexicon.lowercase
    )
    save_lexicon(lex, out)
    diagnostics = [str(d) for p in parsed for d in p.diagnostics]
    write_json(
        out + ".meta.json",
        {
            **provenance(cfg, "lexicon"),
            "inputs": list(inputs),
            "entries": len(lex),
            "diagnostics": diagnostics,
        },
    )
    logger.info("Wrote lexicon with %d entries to %s", len(lex), out)
    return lex


def run_build_vocab(
    cfg: RunConfig,
    manifest_path: str,
    out: str,
    vocab_size: int | None = None,
    min_freq: int = 2,
) -> Vocab:
    registry = registry_for(cfg)
    manifest = load_manifest(manifest_path, registry)
    size = vocab_size or cfg.model.vocab_size or DEFAULT_VOCAB_SIZE
    vocab = train_vocab(
        (s.text for s in iter_corpus(manifest)), size, min_freq=min_freq
    )
    vocab.save(out)
    write_json(
        out + ".meta.json",
        {
            **provenance(cfg),
            "manifest": manifest_path,
            "vocab_size": size,
            "min_freq": min_freq,
            "pieces": len(vocab),
        },
    )
    logger.info("Wrote %d vocabulary pieces to %s", len(vocab), out)
    return vocab


def _load_lexicon_for(cfg: RunConfig, path: str | None, registry) -> Lexicon | None:
    if path:
        return load_lexicon(path, registry, lowercase=cfg.lexicon.lowercase)
    if cfg.gen.mode != "vanilla_mlm":
        raise ConfigError(f"--lexicon is required for gen.mode={cfg.gen.mode}")
    return None


def run_gen_data(
    cfg: RunConfig,
    manifest_path: str,
    vocab_path: str,
    out: str,
    lexicon_path: str | None = None,
    validate: bool = False,
) -> dict:
    """Sample sentences, build examples, write JSONL plus a stats sidecar."""
    registry = registry_for(cfg)
    manifest = load_manifest(manifest_path, registry)
    vocab = Vocab.load(vocab_path)
    lex = _load_lexicon_for(cfg, lexicon_path, registry)
    limit = cfg.gen.sentences or manifest.total_sentences
    logger.info(
        "Generating %s examples from %d sentences (x%d)",
        cfg.gen.mode,
        limit,
        cfg.gen.duplication,
    )
    sentences = sentence_stream(manifest, cfg.sampling, limit=limit)
    examples, stats = generate(
        sentences,
        cfg.gen,
        lex,
        vocab,
        workers=cfg.workers,
        registry=registry,
        validate=validate,
    )
    count = write_examples(out, examples)
    report = stats.to_dict()
    report["provenance"] = provenance(cfg, "gen", "sampling")
    report["corpus_diagnostics"] = [str(d) for d in manifest.diagnostics]
    write_json(out + ".stats.json", report)
    logger.info(
        "Wrote %d examples to %s (masked-word rate %.4f, cross-lingual %.4f)",
        count,
        out,
        stats.masked_word_rate,
        stats.xling_frac,
    )
    return report


def run_stats(
    cfg: RunConfig,
    examples_path: str,
    out: str | None = None,
    lexicon_path: str | None = None,
    manifest_path: str | None = None,
) -> dict:
    registry = registry_for(cfg)
    report = evalsuite.masking_stats_report(read_examples(examples_path), registry)
    if lexicon_path and manifest_path:
        lex = load_lexicon(lexicon_path, registry, lowercase=cfg.lexicon.lowercase)
        manifest = load_manifest(manifest_path, registry)
        cov = coverage(
            ((pretokenize(s.text), s.lang) for s in iter_corpus(manifest)), lex
        )
        report["coverage"] = cov.to_dict()
    elif lexicon_path or manifest_path:
        raise ConfigError("coverage needs both --lexicon and --manifest")
    if out:
        write_json(out, report)
    logger.info(
        "%d examples: masked-word rate %.4f, cross-lingual labels %.4f",
        report["example_count"],
        report["masked_word_rate"],
        report["xling_frac"],
    )
    return report


def run_train(
    cfg: RunConfig,
    examples_path: str,
    vocab_path: str,
    out_dir: str,
    resume: str | None = None,
):
    vocab = Vocab.load(vocab_path)
    examples = list(read_examples(examples_path))
    model_cfg = cfg.model.resolved(len(vocab), len(cfg.languages))
    if model_cfg.vocab_size != len(vocab):
        raise ConfigError(
            f"model.vocab_size {model_cfg.vocab_size} does not match {vocab_path} "
            f"({len(vocab)} pieces)"
        )
    if resume:
        params, _, _ = load_checkpoint(resume)
    else:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.train.seed or 0, 0]))
        params = init_params(model_cfg, rng)
    os.makedirs(out_dir, exist_ok=True)
    write_json(
        os.path.join(out_dir, "train.meta.json"),
        {
            **provenance(cfg, "train"),
            "model": asdict(params.cfg),
            "examples": examples_path,
            "vocab": vocab_path,
            "resume": resume,
        },
    )
    return train(examples, params, cfg.train, out_dir, resume_from=resume)


def run_eval_retrieval(
    cfg: RunConfig,
    checkpoint: str,
    pairs_path: str,
    vocab_path: str,
    out_csv: str,
    out_json: str | None = None,
) -> evalsuite.RetrievalReport:
    registry = registry_for(cfg)
    params, _, _ = load_checkpoint(checkpoint)
    pairs = evalsuite.load_pairs(pairs_path, registry)
    vocab = Vocab.load(vocab_path)
    if len(vocab) != params.cfg.vocab_size:
        raise DataError(
            f"{vocab_path}: {len(vocab)} pieces but {checkpoint} expects "
            f"{params.cfg.vocab_size}"
        )
    report = evalsuite.layerwise_report(params, pairs, vocab, workers=cfg.workers)
    out_json = out_json or os.path.splitext(out_csv)[0] + ".json"
    evalsuite.write_report(report, out_csv, out_json)
    return report


def run_synth(cfg: RunConfig, out_dir: str) -> synthlang.SynthOutput:
    missing = [code for code in cfg.synth.languages if code not in cfg.languages]
    if missing:
        raise ConfigError(
            f"synth.languages {missing} are not listed in languages {cfg.languages}"
        )
    return synthlang.generate_all(cfg.synth, registry_for(cfg), out_dir)


def _variant(cfg: RunConfig, model: str, seed: int) -> RunConfig:
    spec = MODEL_VARIANTS[model]
    gen = replace(cfg.gen, seed=seed, mode=spec.mode)
    if spec.t is not None:
        gen = replace(gen, t=spec.t)
    conditioning = cfg.model.conditioning_enabled
    if spec.conditioning is not None:
        conditioning = spec.conditioning
    return replace(
        cfg,
        seed=seed,
        gen=gen,
        sampling=replace(cfg.sampling, seed=seed),
        model=replace(cfg.model, conditioning_enabled=conditioning),
        train=replace(cfg.train, seed=seed),
    )


def run_compare(
    cfg: RunConfig,
    out_dir: str,
    seeds: Sequence[int] = (0, 1, 2),
    ablation: bool = False,
    vocab_size: int | None = None,
    models: Sequence[str] | None = None,
) -> List[Tuple[str, int, float]]:
    """Train each model variant on one synthetic pair and compare retrieval.

    ``models`` defaults to DICT-MLM and vanilla MLM; ``ablation`` appends
    DICT-MLM without the language-conditioned head.
    """
    models = list(models or COMPARE_MODELS)
    if ablation and ABLATION_MODEL not in models:
        models.append(ABLATION_MODEL)
    unknown = [m for m in models if m not in MODEL_VARIANTS]
    if unknown:
        raise ConfigError(
            f"unknown compare models {unknown}; choose from {sorted(MODEL_VARIANTS)}"
        )
    synth_dir = os.path.join(out_dir, "synth")
    synth = run_synth(cfg, synth_dir)
    lexicon = os.path.join(out_dir, "lexicon.jsonl")
    run_merge_dicts(cfg, synth.dictionaries, lexicon)
    vocab = os.path.join(out_dir, "vocab.txt")
    run_build_vocab(cfg, synth.manifest, vocab, vocab_size=vocab_size)
    pairs = synth.pairs[0]

    runs: List[Tuple[str, int, float]] = []
    for seed in seeds:
        for model in models:
            variant = _variant(cfg, model, seed)
            run_dir = os.path.join(out_dir, model, f"seed-{seed}")
            examples = os.path.join(run_dir, "examples.jsonl")
            run_gen_data(variant, synth.manifest, vocab, examples, lexicon_path=lexicon)
            result = run_train(variant, examples, vocab, os.path.join(run_dir, "train"))
            report = run_eval_retrieval(
                variant,
                result.checkpoints[-1],
                pairs,
                vocab,
                os.path.join(run_dir, "retrieval.csv"),
            )
            runs.append((model, seed, report.last4_avg))
            logger.info(
                "%s seed %d: last-4 average %.4f", model, seed, report.last4_avg
            )
    runs_path, summary_path = evalsuite.write_compare(out_dir, runs)
    logger.info("Comparison written to %s and %s", runs_path, summary_path)
    return runs
