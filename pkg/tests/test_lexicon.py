import numpy as np
import pytest

import src.lexicon as lexicon_module
from src.errors import DataError


def test_parse_muse_reports_malformed_lines(registry):
    sa, sb = registry.get("sa"), registry.get("sb")
    parsed = lexicon_module.parse_muse(
        ["dog hund", "", "cat", "house haus extra", "Tree Baum"],
        sa,
        sb,
        source="sa-sb.txt",
    )
    assert [(w, s.word) for w, s in parsed.pairs] == [
        ("dog", "hund"),
        ("tree", "baum"),
    ]
    assert [str(d) for d in parsed.diagnostics] == [
        "sa-sb.txt:3: expected 2 fields, got 1",
        "sa-sb.txt:4: expected 2 fields, got 3",
    ]


def test_parse_muse_keeps_case_when_asked(registry):
    sa, sb = registry.get("sa"), registry.get("sb")
    parsed = lexicon_module.parse_muse(["Tree Baum"], sa, sb, lowercase=False)
    assert parsed.pairs[0][0] == "Tree"
    assert parsed.pairs[0][1].word == "Baum"


def test_merge_symmetrizes(registry):
    sa, sb = registry.get("sa"), registry.get("sb")
    lex = lexicon_module.merge([lexicon_module.parse_muse(["dog hund"], sa, sb)])
    Entry = lexicon_module.SynonymEntry
    assert lexicon_module.lookup("dog", sa, lex) == (Entry("hund", sb),)
    assert lexicon_module.lookup("hund", sb, lex) == (Entry("dog", sa),)


def test_merge_without_symmetrize(registry):
    sa, sb = registry.get("sa"), registry.get("sb")
    parsed = lexicon_module.parse_muse(["dog hund"], sa, sb)
    lex = lexicon_module.merge([parsed], symmetrize=False)
    assert lexicon_module.lookup("dog", sa, lex)
    assert lexicon_module.lookup("hund", sb, lex) == ()


def test_merge_drops_self_synonyms_and_duplicates(registry):
    sa, sb = registry.get("sa"), registry.get("sb")
    same = lexicon_module.parse_muse(["dog dog"], sa, sa)
    cross = lexicon_module.parse_muse(["dog hund", "dog hund"], sa, sb)
    lex = lexicon_module.merge([same, cross])
    assert lexicon_module.lookup("dog", sa, lex) == (
        lexicon_module.SynonymEntry("hund", sb),
    )


def test_merge_is_order_independent(registry):
    sa, sb, sc = (registry.get(c) for c in ("sa", "sb", "sc"))
    first = lexicon_module.parse_muse(["dog hund", "cat katze"], sa, sb)
    second = lexicon_module.parse_muse(["dog perro"], sa, sc)
    merged = lexicon_module.merge([first, second])
    assert merged == lexicon_module.merge([second, first])


def test_synonyms_sorted_by_language_then_word(lexicon, registry):
    syns = lexicon.entries[("a003", registry.get("sa"))]
    assert [s.word for s in syns] == ["b003", "c003"]
    assert syns == tuple(sorted(syns, key=lambda s: s.sort_key))


def test_lookup_normalizes_case(registry):
    sa, sb = registry.get("sa"), registry.get("sb")
    lex = lexicon_module.merge([lexicon_module.parse_muse(["dog hund"], sa, sb)])
    assert lexicon_module.lookup("DOG", sa, lex)
    assert lexicon_module.lookup("dog", sb, lex) == ()


def _fan_out_lexicon(registry):
    """``dog`` has one synonym in sb and three in sc."""
    sa, sb, sc = (registry.get(c) for c in ("sa", "sb", "sc"))
    return lexicon_module.merge(
        [
            lexicon_module.parse_muse(["dog hund"], sa, sb),
            lexicon_module.parse_muse(
                ["dog perro", "dog can", "dog chucho"], sa, sc
            ),
        ]
    )


@pytest.mark.parametrize(
    "strategy, expected", [("per_language", 0.5), ("flat", 0.25)]
)
def test_sample_synonym_strategies(registry, strategy, expected):
    lex = _fan_out_lexicon(registry)
    rng = np.random.default_rng(0)
    draws = [
        lexicon_module.sample_synonym("dog", registry.get("sa"), lex, rng, strategy)
        for _ in range(4000)
    ]
    share = sum(d.lang.code == "sb" for d in draws) / len(draws)
    assert abs(share - expected) < 0.03


def test_sample_synonym_within_language_is_uniform(registry):
    lex = _fan_out_lexicon(registry)
    rng = np.random.default_rng(1)
    words = [
        lexicon_module.sample_synonym("dog", registry.get("sa"), lex, rng).word
        for _ in range(6000)
    ]
    sc_words = [w for w in words if w != "hund"]
    for w in ("perro", "can", "chucho"):
        assert abs(sc_words.count(w) / len(sc_words) - 1 / 3) < 0.03


def test_sample_synonym_unknown_word(registry, lexicon):
    rng = np.random.default_rng(0)
    sa = registry.get("sa")
    assert lexicon_module.sample_synonym("zzz", sa, lexicon, rng) is None


def test_coverage(registry, lexicon):
    sa, sb = registry.get("sa"), registry.get("sb")
    corpus = [(["a000", "a001", "a060", "a099"], sa), (["b010", "b070"], sb)]
    report = lexicon_module.coverage(corpus, lexicon)
    assert report.covered == 3
    assert report.total == 6
    assert report.fraction == pytest.approx(0.5)
    assert report.per_language == {"sa": 0.5, "sb": 0.5}


def test_coverage_empty_corpus(lexicon):
    report = lexicon_module.coverage([], lexicon)
    assert report.empty
    assert report.fraction == 0.0


def test_save_and_load_lexicon(tmp_path, registry, lexicon):
    path = tmp_path / "lexicon.jsonl"
    lexicon_module.save_lexicon(lexicon, str(path))
    loaded = lexicon_module.load_lexicon(str(path), registry)
    assert loaded == lexicon
    first = path.read_text(encoding="utf-8").splitlines()[0]
    assert first.startswith('{"word": "a000", "lang": "sa"')


def test_load_lexicon_bad_record(tmp_path, registry):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"word": "dog", "lang": "sa"}\n', encoding="utf-8")
    with pytest.raises(DataError, match="bad.jsonl:1"):
        lexicon_module.load_lexicon(str(path), registry)


def test_pair_from_filename():
    assert lexicon_module.pair_from_filename("dicts/en-de.txt") == ("en", "de")
    assert lexicon_module.pair_from_filename("en-de.0-5000.txt") == ("en", "de")
    with pytest.raises(DataError, match="cannot infer language pair"):
        lexicon_module.pair_from_filename("english_german.txt")


def test_read_muse_file(tmp_path, registry):
    path = tmp_path / "sa-sc.txt"
    path.write_text("dog perro\nbroken\n", encoding="utf-8")
    parsed = lexicon_module.read_muse_file(str(path), registry)
    assert parsed.src.code == "sa"
    assert parsed.tgt.code == "sc"
    assert len(parsed.pairs) == 1
    assert parsed.diagnostics[0].line == 2


def test_registry_unknown_code(registry):
    with pytest.raises(DataError, match="unknown language code 'xx'"):
        registry.get("xx")
    assert registry.by_id(2).code == "sc"
    assert registry.register("sa").id == 0


def test_synonym_entry_rejects_whitespace(registry):
    with pytest.raises(DataError):
        lexicon_module.SynonymEntry("two words", registry.get("sa"))
