import numpy as np
import pytest

import src.examplegen as examplegen
from src.config import GenConfig, SynthConfig
from src.corpus import Sentence
from src.errors import DataError, ExampleError
from src.lexicon import LanguageRegistry, merge, parse_muse
from src.tokenizer import CLS, MASK, SEP, SPECIAL_TOKENS, Vocab, encode


def _generate(sentences, cfg, lex, vocab, **kwargs):
    examples, stats = examplegen.generate(sentences, cfg, lex, vocab, **kwargs)
    return list(examples), stats


def _mixed_sentences(make_sentence, count, length=20, covered_share=0.5):
    """Sentences mixing covered (0..49) and uncovered (50..99) sa words."""
    rng = np.random.default_rng(123)
    rows = []
    for _ in range(count):
        covered = rng.random(length) < covered_share
        indices = np.where(
            covered, rng.integers(0, 50, length), 50 + rng.integers(0, 50, length)
        )
        rows.append(make_sentence("sa", [int(i) for i in indices]))
    return rows


def test_mask_budget_rounding():
    cfg = GenConfig(budget_rounding="nearest")
    rng = np.random.default_rng(0)
    assert examplegen.mask_budget(20, cfg, rng) == 3
    assert examplegen.mask_budget(10, cfg, rng) == 2
    assert examplegen.mask_budget(1, cfg, rng) == 1
    assert examplegen.mask_budget(3, cfg, rng) == 1


def test_stochastic_budget_is_unbiased():
    cfg = GenConfig(budget_rounding="stochastic")
    rng = np.random.default_rng(0)
    draws = [examplegen.mask_budget(10, cfg, rng) for _ in range(4000)]
    assert set(draws) == {1, 2}
    assert abs(np.mean(draws) - 1.5) < 0.05


def test_stochastic_rounding_is_the_default():
    assert GenConfig().budget_rounding == "stochastic"
    rng = np.random.default_rng(0)
    assert examplegen.mask_budget(20, GenConfig(), rng) == 3


def test_full_eligibility_selects_three_of_twenty(registry, word_vocab, lexicon):
    text = " ".join(f"a{i:03d}" for i in range(20))
    sent = encode(text, registry.get("sa"), word_vocab)
    rng = np.random.default_rng(0)
    chosen = examplegen.select_mask_words(sent, lexicon, GenConfig(), rng)
    assert len(chosen) == 3
    assert chosen == sorted(set(chosen))


def test_zero_eligibility_falls_back_to_vanilla_words(registry, word_vocab, lexicon):
    text = " ".join(f"a{i:03d}" for i in range(50, 70))
    sent = encode(text, registry.get("sa"), word_vocab)
    rng = np.random.default_rng(0)
    assert len(examplegen.select_mask_words(sent, lexicon, GenConfig(), rng)) == 3


def test_eligible_words_are_filled_first(registry, word_vocab, lexicon):
    # words 0 and 1 are eligible, the other 18 are not
    text = " ".join(f"a{i:03d}" for i in [0, 1] + list(range(60, 78)))
    sent = encode(text, registry.get("sa"), word_vocab)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        chosen = examplegen.select_mask_words(sent, lexicon, GenConfig(), rng)
        assert len(chosen) == 3
        assert {0, 1} <= set(chosen)


def test_eligible_only_budget(registry, word_vocab, lexicon):
    text = " ".join(f"a{i:03d}" for i in list(range(10)) + list(range(60, 70)))
    sent = encode(text, registry.get("sa"), word_vocab)
    cfg = GenConfig(mask_budget="eligible_only", budget_rounding="nearest")
    chosen = examplegen.select_mask_words(sent, lexicon, cfg, np.random.default_rng(0))
    assert len(chosen) == 2
    assert all(i < 10 for i in chosen)


def test_choose_label(registry, lexicon):
    sa = registry.get("sa")
    rng = np.random.default_rng(0)
    never = GenConfig(t=0.0)
    assert examplegen.choose_label("a001", sa, True, lexicon, never, rng) == (
        "a001",
        sa,
    )
    always = GenConfig(t=1.0)
    for _ in range(20):
        word, lang = examplegen.choose_label("a001", sa, True, lexicon, always, rng)
        assert lang != sa
        assert word in ("b001", "c001")
    assert examplegen.choose_label("a060", sa, False, lexicon, always, rng) == (
        "a060",
        sa,
    )


def test_vanilla_mode_ignores_t(registry, lexicon):
    sa = registry.get("sa")
    cfg = GenConfig(mode="vanilla_mlm", t=1.0)
    rng = np.random.default_rng(0)
    assert examplegen.choose_label("a001", sa, True, lexicon, cfg, rng) == ("a001", sa)


def test_cross_lingual_label_substitutes_pieces():
    registry = LanguageRegistry(["en", "es"])
    en, es = registry.get("en"), registry.get("es")
    lex = merge([parse_muse(["life vida"], en, es)])
    vocab = Vocab(
        SPECIAL_TOKENS
        + ["food", "and", "water", "are", "necessities", "of", "life", "vi", "##da"]
    )
    sent = encode("food and water are necessities of life", en, vocab)
    cfg = GenConfig(t=1.0, budget_rounding="nearest")
    example = examplegen.build_dict_mlm_example(
        sent, cfg, lex, vocab, np.random.default_rng(0)
    )
    assert example.masked_positions == [7, 8]
    assert example.label_ids == [vocab.id_of("vi"), vocab.id_of("##da")]
    assert example.label_lang_ids == [es.id, es.id]
    assert example.lang_ids == [en.id] * 7 + [es.id, es.id] + [en.id]
    assert example.token_ids[0] == CLS
    assert example.token_ids[-1] == SEP
    assert example.xling_word_count == 1
    example.validate(cfg.max_seq_len)


def test_dict_mlm_example_invariants(registry, word_vocab, lexicon, make_sentence):
    sentences = _mixed_sentences(make_sentence, 50)
    examples, stats = _generate(
        sentences, GenConfig(t=0.7, duplication=2), lexicon, word_vocab, validate=True
    )
    assert len(examples) == 100
    for ex in examples:
        for pos, lang in zip(ex.masked_positions, ex.label_lang_ids):
            assert ex.lang_ids[pos] == lang
        assert not any(ex.segment_ids)
    assert stats.skipped == 0


def test_corruption_split():
    rng = np.random.default_rng(0)
    n = 40000
    tokens = [10] * n
    examplegen.corrupt(tokens, range(n), [10] * n, 305, len(SPECIAL_TOKENS), rng)
    mask = sum(t == MASK for t in tokens) / n
    keep = sum(t == 10 for t in tokens) / n
    rand = 1 - mask - keep
    assert abs(mask - 0.8) < 0.01
    assert abs(keep - 0.1) < 0.01
    assert abs(rand - 0.1) < 0.01
    assert all(t == MASK or t >= len(SPECIAL_TOKENS) for t in tokens)


def test_corrupt_reports_the_branch_taken():
    # one non-special piece: every random draw lands on the label itself
    rng = np.random.default_rng(1)
    n = 2000
    tokens = [5] * n
    branches = examplegen.corrupt(tokens, range(n), [5] * n, 6, 5, rng)
    assert len(branches) == n
    assert set(branches) == {"m", "k", "r"}
    for token, branch in zip(tokens, branches):
        assert (token == MASK) == (branch == "m")
    assert abs(branches.count("r") / n - 0.1) < 0.03


def test_generated_examples_record_corruption(word_vocab, lexicon, make_sentence):
    examples, stats = _generate(
        _mixed_sentences(make_sentence, 20), GenConfig(), lexicon, word_vocab
    )
    for ex in examples:
        assert len(ex.corruption) == len(ex.masked_positions)
    assert stats.corrupt_mask == sum(ex.corruption.count("m") for ex in examples)
    with pytest.raises(ExampleError, match="corruption"):
        examplegen.TrainingExample(
            token_ids=[CLS, MASK, SEP],
            lang_ids=[0, 0, 0],
            segment_ids=[0, 0, 0],
            masked_positions=[1],
            label_ids=[7],
            label_lang_ids=[0],
            corruption="mk",
        ).validate()


def test_masked_word_rate_on_twenty_word_sentences(word_vocab, make_sentence):
    sentences = [make_sentence("sa", range(50, 70)) for _ in range(200)]
    cfg = GenConfig(mode="vanilla_mlm", duplication=5)
    examples, stats = _generate(sentences, cfg, None, word_vocab)
    assert len(examples) == 1000
    assert stats.masked_word_rate == pytest.approx(0.15)
    split = stats.corruption_split
    assert abs(split["mask"] - 0.8) < 0.03
    assert abs(split["keep"] - 0.1) < 0.03
    assert abs(split["random"] - 0.1) < 0.03


def test_duplicates_get_different_masks(word_vocab, lexicon, make_sentence):
    sentence = make_sentence("sa", range(20))
    examples, _ = _generate([sentence], GenConfig(duplication=5), lexicon, word_vocab)
    assert len(examples) == 5
    assert len({tuple(ex.masked_positions) for ex in examples}) >= 4


def test_duplication_multiplies_example_count(word_vocab, lexicon, make_sentence):
    sentences = _mixed_sentences(make_sentence, 30)
    once, _ = _generate(sentences, GenConfig(duplication=1), lexicon, word_vocab)
    five, _ = _generate(sentences, GenConfig(duplication=5), lexicon, word_vocab)
    assert len(five) == 5 * len(once) == 150


def test_t_zero_matches_vanilla_bitwise(word_vocab, lexicon, make_sentence):
    sentences = _mixed_sentences(make_sentence, 300)
    dict_examples, dict_stats = _generate(
        sentences, GenConfig(t=0.0, seed=5), lexicon, word_vocab
    )
    vanilla_examples, vanilla_stats = _generate(
        sentences, GenConfig(mode="vanilla_mlm", t=0.9, seed=5), lexicon, word_vocab
    )
    assert [e.to_json() for e in dict_examples] == [
        e.to_json() for e in vanilla_examples
    ]
    assert dict_stats.to_dict() == vanilla_stats.to_dict()
    assert dict_stats.xling_frac == 0.0


def test_output_does_not_depend_on_workers(word_vocab, lexicon, make_sentence):
    sentences = _mixed_sentences(make_sentence, examplegen.CHUNK_SIZE * 2 + 17)
    cfg = GenConfig(t=0.5, duplication=2, seed=9)
    single, _ = _generate(sentences, cfg, lexicon, word_vocab, workers=1)
    pooled, _ = _generate(sentences, cfg, lexicon, word_vocab, workers=4)
    assert [e.to_json() for e in single] == [e.to_json() for e in pooled]


def test_example_can_mix_three_languages(word_vocab, lexicon, make_sentence):
    sentence = make_sentence("sa", range(20))
    cfg = GenConfig(t=1.0, duplication=20)
    examples, _ = _generate([sentence], cfg, lexicon, word_vocab, validate=True)
    assert any(len(set(ex.lang_ids)) >= 3 for ex in examples)


def test_cross_lingual_fraction_full_coverage(word_vocab, lexicon, make_sentence):
    rng = np.random.default_rng(4)
    sentences = [
        make_sentence("sa", [int(i) for i in rng.integers(0, 50, 20)])
        for _ in range(1500)
    ]
    cfg = GenConfig(t=0.5, duplication=3, seed=1)
    _, stats = _generate(sentences, cfg, lexicon, word_vocab)
    assert abs(stats.xling_frac - 0.5) < 0.02


def test_cross_lingual_fraction_dilutes_with_coverage(
    word_vocab, lexicon, make_sentence
):
    # one eligible word out of twenty: one of the three masked words is eligible
    sentences = [
        make_sentence("sa", [i % 50] + list(range(60, 79))) for i in range(700)
    ]
    cfg = GenConfig(t=0.9, duplication=3, seed=2)
    _, stats = _generate(sentences, cfg, lexicon, word_vocab)
    assert abs(stats.xling_frac - 0.9 / 3) < 0.02


@pytest.mark.slow
@pytest.mark.parametrize("t", [0.5, 0.7, 0.9])
def test_cross_lingual_fraction_matches_t(word_vocab, lexicon, make_sentence, t):
    rng = np.random.default_rng(7)
    sentences = [
        make_sentence("sa", [int(i) for i in rng.integers(0, 50, 20)])
        for _ in range(5000)
    ]
    _, stats = _generate(sentences, GenConfig(t=t, duplication=3), lexicon, word_vocab)
    assert abs(stats.xling_frac - t) < 0.01


@pytest.mark.slow
def test_masking_rates_over_large_stream(word_vocab, make_sentence):
    sentences = [
        make_sentence("sb", range(i % 80, i % 80 + 20)) for i in range(35000)
    ]
    cfg = GenConfig(mode="vanilla_mlm", duplication=1)
    _, stats = _generate(sentences, cfg, None, word_vocab)
    assert stats.masked_word_rate == pytest.approx(0.15)
    split = stats.corruption_split
    assert abs(split["mask"] - 0.8) < 0.005
    assert abs(split["keep"] - 0.1) < 0.005
    assert abs(split["random"] - 0.1) < 0.005


def test_masked_word_rate_on_synthetic_sentence_lengths(word_vocab, make_sentence):
    synth = SynthConfig()
    rng = np.random.default_rng(11)
    sentences = []
    for _ in range(4000):
        length = int(rng.integers(synth.min_len, synth.max_len + 1))
        sentences.append(make_sentence("sa", rng.integers(50, 100, length).tolist()))
    cfg = GenConfig(mode="vanilla_mlm", duplication=1)
    _, stats = _generate(sentences, cfg, None, word_vocab)
    assert abs(stats.masked_word_rate - 0.15) < 0.005

    nearest = GenConfig(mode="vanilla_mlm", duplication=1, budget_rounding="nearest")
    _, biased = _generate(sentences, nearest, None, word_vocab)
    assert biased.masked_word_rate > 0.153


def test_truncates_whole_words(word_vocab, lexicon, make_sentence):
    cfg = GenConfig(max_seq_len=8)
    examples, _ = _generate(
        [make_sentence("sa", range(20))], cfg, lexicon, word_vocab, validate=True
    )
    for ex in examples:
        assert len(ex.token_ids) == 8
        assert ex.word_count == 6


def test_unusable_sentence_becomes_diagnostic(registry, word_vocab, lexicon):
    sa = registry.get("sa")
    sentences = [Sentence("   ", sa), Sentence("a001 a002", sa)]
    cfg = GenConfig(duplication=1)
    examples, stats = _generate(sentences, cfg, lexicon, word_vocab)
    assert len(examples) == 1
    assert stats.skipped == 1
    assert "sentence 0" in str(stats.diagnostics[0])
    assert stats.sentences == 2


def test_tlm_without_replacement_copies_sentence(registry, word_vocab, lexicon):
    sent = encode("a000 a001 a002", registry.get("sa"), word_vocab)
    cfg = GenConfig(mode="dict_tlm", tlm_replace_prob=0.0)
    ids = [word_vocab.id_of(f"a00{i}") for i in range(3)]
    expected = [CLS] + ids + [SEP] + ids + [SEP]
    for seed in range(10):
        ex = examplegen.build_tlm_example(
            sent, cfg, lexicon, word_vocab, np.random.default_rng(seed)
        )
        ex.validate(cfg.max_seq_len, tlm=True)
        assert ex.segment_ids == [0, 0, 0, 0, 0, 1, 1, 1, 1]
        assert len(ex.token_ids) == len(expected)
        for pos, label in zip(ex.masked_positions, ex.label_ids):
            assert expected[pos] == label
        for pos, token in enumerate(ex.token_ids):
            if pos not in ex.masked_positions:
                assert token == expected[pos]


def test_tlm_single_word_replaced_by_synonym(registry, word_vocab, lexicon):
    sent = encode("a004", registry.get("sa"), word_vocab)
    cfg = GenConfig(mode="dict_tlm", tlm_replace_prob=1.0)
    ex = examplegen.build_tlm_example(
        sent, cfg, lexicon, word_vocab, np.random.default_rng(3)
    )
    assert len(ex.token_ids) == 5
    assert ex.masked_word_count == 1
    assert len(ex.masked_positions) == 1
    half_b = ex.token_ids[3] if 3 not in ex.masked_positions else ex.label_ids[0]
    assert word_vocab.pieces[half_b] in ("b004", "c004")
    assert ex.lang_ids[3] != registry.get("sa").id


def test_tlm_masks_fifteen_percent_of_both_halves(word_vocab, lexicon, make_sentence):
    sentences = _mixed_sentences(make_sentence, 100, length=10)
    cfg = GenConfig(mode="dict_tlm", duplication=2)
    examples, stats = _generate(sentences, cfg, lexicon, word_vocab, validate=True)
    assert all(ex.word_count == 20 for ex in examples)
    assert stats.masked_word_rate == pytest.approx(0.15)


def test_write_and_read_examples(tmp_path, word_vocab, lexicon, make_sentence):
    examples, _ = _generate(
        _mixed_sentences(make_sentence, 5), GenConfig(), lexicon, word_vocab
    )
    path = tmp_path / "out" / "examples.jsonl"
    assert examplegen.write_examples(str(path), examples) == 25
    assert list(examplegen.read_examples(str(path))) == examples


def test_read_examples_reports_line(tmp_path):
    path = tmp_path / "examples.jsonl"
    path.write_text('{"token_ids": [2, 4, 3]}\n', encoding="utf-8")
    with pytest.raises(DataError, match="examples.jsonl:1"):
        list(examplegen.read_examples(str(path)))


def test_validate_rejects_special_slot():
    ex = examplegen.TrainingExample(
        token_ids=[CLS, 10, SEP],
        lang_ids=[0, 0, 0],
        segment_ids=[0, 0, 0],
        masked_positions=[0],
        label_ids=[10],
        label_lang_ids=[0],
    )
    with pytest.raises(ExampleError, match="special token"):
        ex.validate()
