import json
import os

import numpy as np
import pytest

import src.synthlang as synthlang
from src.config import SynthConfig
from src.corpus import load_manifest
from src.errors import SynthError
from src.evalsuite import load_pairs
from src.lexicon import LanguageRegistry, read_muse_file


def _cfg(**overrides):
    values = dict(
        lemma_count=60,
        languages=["sa", "sb"],
        corpus_sentences=50,
        pair_count=10,
        min_len=3,
        max_len=6,
        seed=3,
    )
    values.update(overrides)
    return SynthConfig(**values)


def _registry(cfg):
    return LanguageRegistry(cfg.languages)


def test_lemma_base_is_injective():
    spellings = [synthlang.lemma_base(k) for k in range(2000)]
    assert len(set(spellings)) == 2000
    assert synthlang.lemma_base(0) == "papa"
    assert synthlang.lemma_base(1) == "pape"
    with pytest.raises(SynthError):
        synthlang.lemma_base(-1)


def test_parse_transform_chains_steps():
    assert synthlang.parse_transform("suffix:ka")("papa") == "papaka"
    assert synthlang.parse_transform("script:greek")("papa") == "παπα"
    assert synthlang.parse_transform("script:cyrillic,suffix:lo")("tiko") == "тикоlo"
    assert synthlang.parse_transform("truncate:3,suffix:mu")("tetelo") == "tetmu"
    assert synthlang.parse_transform("")("papa") == "papa"


def test_parse_transform_errors():
    with pytest.raises(SynthError, match="unknown script"):
        synthlang.parse_transform("script:runic")
    with pytest.raises(SynthError, match="truncate needs an integer"):
        synthlang.parse_transform("truncate:x")
    with pytest.raises(SynthError, match="unknown transform"):
        synthlang.parse_transform("reverse")


def test_default_transforms():
    assert synthlang.default_transforms("near", 2) == ["suffix:ka", "suffix:lo"]
    far = synthlang.default_transforms("far", 4)
    assert far[:3] == ["script:latin", "script:greek", "script:cyrillic"]
    assert far[3].startswith("script:latin,suffix:")


def test_zipf_weights_follow_power_law():
    p = synthlang.zipf_weights(400, 1.2)
    assert p.sum() == pytest.approx(1.0)
    assert p[0] / p[1] == pytest.approx(2**1.2)
    slope = np.polyfit(np.log(np.arange(1, 401)), np.log(p), 1)[0]
    assert slope == pytest.approx(-1.2)


def test_full_coverage_includes_every_lemma():
    weights = synthlang.zipf_weights(400, 1.2)
    covered = synthlang.covered_lemmas(weights, 1.0, np.random.default_rng(0))
    assert covered.all()


def test_partial_coverage_stays_under_target():
    weights = synthlang.zipf_weights(400, 1.2)
    for seed in range(5):
        covered = synthlang.covered_lemmas(weights, 0.5, np.random.default_rng(seed))
        mass = weights[covered].sum()
        assert 0.45 < mass <= 0.5


def test_world_dictionaries_are_exact():
    cfg = _cfg()
    world = synthlang.gen_languages(cfg, _registry(cfg))
    entries = world.dictionaries[("sa", "sb")]
    assert len(entries) == 60
    assert world.covered_mass == pytest.approx(1.0)
    sa, sb = world.language("sa"), world.language("sb")
    assert entries[0] == (sa.surfaces[0], sb.surfaces[0])
    assert sa.surfaces[5] == synthlang.lemma_base(5) + "ka"
    assert sb.surfaces[5] == synthlang.lemma_base(5) + "lo"
    with pytest.raises(SynthError, match="not part of this synthetic world"):
        world.language("sc")


def test_partial_coverage_world():
    cfg = _cfg(lemma_count=400, coverage=0.5)
    world = synthlang.gen_languages(cfg, _registry(cfg))
    assert 0.45 < world.covered_mass <= 0.5
    assert len(world.dictionaries[("sa", "sb")]) == int(world.covered.sum())


def test_colliding_transform_is_rejected():
    cfg = _cfg(transforms=["", "truncate:2"])
    with pytest.raises(SynthError, match="renders lemmas 0 and 1 both as 'pa'"):
        synthlang.gen_languages(cfg, _registry(cfg))
    cfg = _cfg(transforms=["", "truncate:0"])
    with pytest.raises(SynthError, match="erases lemma 0"):
        synthlang.gen_languages(cfg, _registry(cfg))


def test_corpus_sentence_lengths():
    cfg = _cfg()
    world = synthlang.gen_languages(cfg, _registry(cfg))
    corpus = synthlang.gen_corpus(world, cfg, "sa")
    assert len(corpus) == 50
    assert all(3 <= len(s.split()) <= 6 for s in corpus)
    vocabulary = set(world.language("sa").surfaces)
    assert all(w in vocabulary for s in corpus for w in s.split())


def test_corpus_frequencies_follow_zipf():
    cfg = _cfg(lemma_count=400, corpus_sentences=4000, min_len=8, max_len=12)
    world = synthlang.gen_languages(cfg, _registry(cfg))
    index = {w: k for k, w in enumerate(world.language("sa").surfaces)}
    counts = np.zeros(400)
    for sentence in synthlang.gen_corpus(world, cfg, "sa"):
        for w in sentence.split():
            counts[index[w]] += 1
    top = np.arange(20)
    slope = np.polyfit(np.log(top + 1), np.log(counts[top]), 1)[0]
    assert abs(slope + 1.2) < 0.2


def test_parallel_pairs_translate_word_for_word():
    cfg = _cfg(preset="far")
    world = synthlang.gen_languages(cfg, _registry(cfg))
    sa, sb = world.language("sa"), world.language("sb")
    to_lemma = {w: k for k, w in enumerate(sa.surfaces)}
    pairs = synthlang.gen_parallel(world, cfg, "sa", "sb")
    assert len(pairs) == 10
    assert len({p.src[0] for p in pairs}) == 10
    for pair in pairs:
        lemmas = [to_lemma[w] for w in pair.src[0].split()]
        assert pair.tgt[0] == sb.render(lemmas)
        assert pair.src[1].code == "sa" and pair.tgt[1].code == "sb"


def test_generate_all_writes_loadable_files(tmp_path):
    cfg = _cfg(languages=["sa", "sb", "sc"])
    registry = _registry(cfg)
    out = synthlang.generate_all(cfg, registry, str(tmp_path))
    assert [os.path.basename(p) for p in out.dictionaries] == [
        "sa-sb.txt",
        "sa-sc.txt",
        "sb-sc.txt",
    ]
    muse = read_muse_file(out.dictionaries[0], registry)
    assert len(muse.pairs) == 60
    assert not muse.diagnostics
    manifest = load_manifest(out.manifest, registry)
    assert [e.sentence_count for e in manifest.entries] == [50, 50, 50]
    assert len(load_pairs(out.pairs[0], registry)) == 10
    with open(tmp_path / "synth.json", encoding="utf-8") as f:
        meta = json.load(f)
    assert meta["covered_lemmas"] == 60
    assert meta["synth"]["transforms"] == ["suffix:ka", "suffix:lo", "suffix:mu"]


def test_generate_all_is_deterministic(tmp_path):
    cfg = _cfg()
    first = synthlang.generate_all(cfg, _registry(cfg), str(tmp_path / "one"))
    second = synthlang.generate_all(cfg, _registry(cfg), str(tmp_path / "two"))
    paths = first.dictionaries + first.corpora + first.pairs + [first.manifest]
    others = second.dictionaries + second.corpora + second.pairs + [second.manifest]
    for a, b in zip(paths, others):
        with open(a, "rb") as fa, open(b, "rb") as fb:
            assert fa.read() == fb.read()


def test_generate_all_needs_two_languages(tmp_path):
    cfg = _cfg(languages=["sa"])
    with pytest.raises(SynthError, match="at least two languages"):
        synthlang.generate_all(cfg, _registry(cfg), str(tmp_path))
