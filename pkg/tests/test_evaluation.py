from collections import Counter

import numpy as np
import pytest

from neural_osm.domain import EncoderKind, FrequencyBand
from neural_osm.errors import ArgumentError, NotCoveredError, NotRepresentableError, ParseError
from neural_osm.evaluation import (
    NeighbourIndex,
    TagLexicon,
    TranslationTable,
    band_report,
    estimate_translation_table,
    hamming_similarity,
    lemma_similarity,
    lexicon_embeddings,
    load_tag_lexicon,
    morphology_evaluation,
    multilabel_accuracy,
    nearest_neighbors,
    perplexities,
    pivot_distribution,
    pivot_synonyms,
    semantic_evaluation,
    tag_similarity,
    word_neighbors,
)
from neural_osm.schemas import WordScore

SIX_WORDS = ["w1", "w2", "w3", "w4", "w5", "w6"]
SIX_VECTORS = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9], [-1.0, 0.0], [-0.9, -0.2]])
SIX_BITEXT = [
    (["w1", "w2"], ["A", "A"], [(0, 0), (1, 1)]),
    (["w3"], ["B"], [(0, 0)]),
    (["w4", "w3"], ["B", "E"], [(0, 0), (1, 1)]),
    (["w5"], ["C"], [(0, 0)]),
    (["w6", "w1"], ["A", "D"], [(0, 0), (1, 1)]),
    (["w2"], ["F"], [(0, 0)]),
]


def brute_force_pivot(bitext, e):
    links = [(src[i], tgt[j]) for src, tgt, pairs in bitext for i, j in pairs]
    pair_counts = Counter(links)
    e_counts = Counter(a for a, _ in links)
    f_counts = Counter(b for _, b in links)
    scores = {}
    for e2 in e_counts:
        total = 0.0
        for f in f_counts:
            total += pair_counts[(e, f)] / e_counts[e] * pair_counts[(e2, f)] / f_counts[f]
        if total > 0:
            scores[e2] = total
    return scores


def brute_force_neighbours(vectors, tokens, query, k):
    q = vectors[tokens.index(query)]
    sims = []
    for i, token in enumerate(tokens):
        if token == query:
            continue
        v = vectors[i]
        sims.append((-(q @ v) / (np.linalg.norm(q) * np.linalg.norm(v)), i, token))
    return [token for _, _, token in sorted(sims)[:k]]


class TestNeighbours:
    TOKENS = ["u", "v", "w"]
    MATRIX = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.01]])

    def test_cosine_ranking(self):
        [best] = nearest_neighbors(self.TOKENS, self.MATRIX, self.MATRIX[0], k=1, exclude="u")
        assert best.word == "w"

    def test_scale_invariance(self):
        index = NeighbourIndex(self.TOKENS, self.MATRIX)
        first = [n.word for n in index.nearest(self.MATRIX[1] * 5.0, k=3)]
        assert first[0] == "v"
        assert first == [n.word for n in index.nearest(self.MATRIX[1], k=3)]

    def test_k_larger_than_lexicon(self):
        assert len(NeighbourIndex(self.TOKENS, self.MATRIX).nearest(self.MATRIX[0], k=50, exclude="u")) == 2

    def test_ties_broken_by_row(self):
        index = NeighbourIndex(["p", "q", "r"], np.array([[0.0, 2.0], [0.0, 1.0], [1.0, 0.0]]))
        assert [n.word for n in index.nearest(np.array([0.0, 1.0]), k=2)] == ["p", "q"]

    def test_zero_query(self):
        neighbours = NeighbourIndex(self.TOKENS, self.MATRIX).nearest(np.zeros(2), k=3)
        assert [n.word for n in neighbours] == self.TOKENS
        assert all(n.similarity == 0.0 for n in neighbours)

    def test_invalid_k(self):
        with pytest.raises(ArgumentError):
            NeighbourIndex(self.TOKENS, self.MATRIX).nearest(self.MATRIX[0], k=0)

    def test_shape_mismatch(self):
        with pytest.raises(ArgumentError):
            NeighbourIndex(["u"], self.MATRIX)

    def test_word_model_cannot_represent_rare_word(self, toy_model):
        model, _ = toy_model(EncoderKind.WORD, threshold=2)
        with pytest.raises(NotRepresentableError):
            word_neighbors(model, "d")
        assert [n.word for n in word_neighbors(model, "a", k=5)] != []
        assert len(word_neighbors(model, "a", k=5)) == len(model.source_vocab.lexicon()) - 1

    def test_character_model_represents_unseen_word(self, toy_model):
        model, _ = toy_model(EncoderKind.CNN, threshold=2)
        neighbours = word_neighbors(model, "abba", k=2)
        assert len(neighbours) == 2
        assert all(-1.0 - 1e-12 <= n.similarity <= 1.0 + 1e-12 for n in neighbours)


class TestTranslationTable:
    def test_split_links(self):
        table = estimate_translation_table([(["a"], ["x", "y"], [(0, 0), (0, 1)])])
        assert table.forward["a"] == {"x": 0.5, "y": 0.5}
        assert table.backward["x"] == {"a": 1.0}

    def test_one_to_one_corpus(self):
        table = estimate_translation_table([(["a", "b"], ["x", "y"], [(0, 0), (1, 1)])] * 3)
        assert table.forward == {"a": {"x": 1.0}, "b": {"y": 1.0}}
        assert table.count("a") == 3

    def test_conditionals_sum_to_one(self):
        table = estimate_translation_table(SIX_BITEXT)
        for distribution in list(table.forward.values()) + list(table.backward.values()):
            assert sum(distribution.values()) == pytest.approx(1.0, abs=1e-9)

    def test_unaligned_words_are_left_out(self):
        table = estimate_translation_table([(["a", "b"], ["x"], [(0, 0)])])
        assert "b" not in table.forward

    def test_counts_are_token_occurrences_not_links(self):
        bitext = [
            (["a"], ["x", "y", "z"], [(0, 0), (0, 1), (0, 2)]),
            (["a", "b"], ["x"], [(1, 0)]),
        ]
        table = estimate_translation_table(bitext)
        assert table.count("a") == 2
        assert table.count("b") == 1
        with pytest.raises(NotCoveredError):
            pivot_synonyms(table, "a", floor=3)
        assert pivot_synonyms(table, "a", floor=2) == [("b", pytest.approx(1 / 6))]

    def test_no_links(self):
        with pytest.raises(ArgumentError):
            estimate_translation_table([(["a"], ["x"], [])])


class TestPivotSynonyms:
    def test_single_pivot(self):
        table = TranslationTable({"e": {"f1": 1.0}}, {"f1": {"e2": 0.7, "e": 0.3}}, {"e": 10})
        [(word, score)] = pivot_synonyms(table, "e")
        assert word == "e2"
        assert score == pytest.approx(0.7)

    def test_two_pivots(self):
        table = TranslationTable(
            {"e": {"f1": 0.5, "f2": 0.5}},
            {"f1": {"e2": 0.4, "e": 0.6}, "f2": {"e2": 0.6, "e": 0.4}},
            {"e": 10},
        )
        [(word, score)] = pivot_synonyms(table, "e")
        assert word == "e2"
        assert score == pytest.approx(0.5)

    def test_pivot_distribution_sums_to_one(self):
        table = estimate_translation_table(SIX_BITEXT)
        for e in SIX_WORDS:
            assert sum(pivot_distribution(table, e).values()) == pytest.approx(1.0, abs=1e-12)

    def test_matches_exhaustive_sum(self):
        bitext = [
            (["a", "b"], ["x", "y"], [(0, 0), (1, 1)]),
            (["c", "a"], ["x", "z"], [(0, 0), (1, 1)]),
            (["d", "b", "c"], ["y", "z", "x"], [(0, 0), (1, 1), (2, 2)]),
        ]
        table = estimate_translation_table(bitext)
        for e in ["a", "b", "c", "d"]:
            expected = brute_force_pivot(bitext, e)
            got = pivot_distribution(table, e)
            assert got.keys() == expected.keys()
            for word in got:
                assert got[word] == pytest.approx(expected[word], abs=1e-12)
            top = {w for w, _ in pivot_synonyms(table, e, floor=1)}
            assert top == {w for w in expected if w != e}

    def test_tie_break_by_first_seen(self):
        table = estimate_translation_table([(["a", "b", "c"], ["x", "x", "x"], [(0, 0), (1, 1), (2, 2)])])
        assert [w for w, _ in pivot_synonyms(table, "c", floor=1)] == ["a", "b"]

    def test_top_truncates(self):
        table = estimate_translation_table([(list("abcdefg"), ["x"] * 7, [(i, i) for i in range(7)])])
        assert len(pivot_synonyms(table, "a", top=5, floor=1)) == 5

    def test_frequency_floor(self):
        table = estimate_translation_table([(["a"], ["x"], [(0, 0)])] * 4)
        with pytest.raises(NotCoveredError):
            pivot_synonyms(table, "a", floor=5)
        assert pivot_synonyms(table, "a", floor=4) == []

    def test_uncovered_query(self):
        with pytest.raises(NotCoveredError):
            pivot_synonyms(estimate_translation_table(SIX_BITEXT), "zzz")


class TestMultilabelAccuracy:
    def test_half(self):
        assert multilabel_accuracy([({"a"}, {"a", "b"}), ({"c"}, {"d"})]) == 0.5

    def test_superset_everywhere(self):
        assert multilabel_accuracy([({"a"}, {"a", "b"}), ({"c", "d"}, {"c", "d", "e"})]) == 1.0

    def test_disjoint(self):
        assert multilabel_accuracy([({"a"}, {"b"})]) == 0.0

    def test_empty(self):
        with pytest.raises(ArgumentError):
            multilabel_accuracy([])

    def test_monotone_in_k(self):
        index = NeighbourIndex(SIX_WORDS, SIX_VECTORS)
        table = estimate_translation_table(SIX_BITEXT)
        previous = 0.0
        for k in range(1, 6):
            items = []
            for e in SIX_WORDS:
                gold = {w for w, _ in pivot_synonyms(table, e, floor=1)}
                found = {n.word for n in index.nearest(SIX_VECTORS[SIX_WORDS.index(e)], k, exclude=e)}
                items.append((gold, found))
            value = multilabel_accuracy(items)
            assert value >= previous
            previous = value

    def test_six_word_pipeline_matches_brute_force(self):
        index = NeighbourIndex(SIX_WORDS, SIX_VECTORS)
        table = estimate_translation_table(SIX_BITEXT)
        items, hits = [], 0
        for e in SIX_WORDS:
            gold = {w for w, _ in pivot_synonyms(table, e, floor=1)}
            found = {n.word for n in index.nearest(SIX_VECTORS[SIX_WORDS.index(e)], 1, exclude=e)}
            items.append((gold, found))
            brute_gold = {w for w in brute_force_pivot(SIX_BITEXT, e) if w != e}
            brute_found = set(brute_force_neighbours(SIX_VECTORS, SIX_WORDS, e, 1))
            assert (gold, found) == (brute_gold, brute_found)
            hits += bool(brute_gold & brute_found)
        assert multilabel_accuracy(items) == hits / len(SIX_WORDS)
        assert multilabel_accuracy(items) == 4 / 6


class TestMorphology:
    LEXICON = TagLexicon(
        analyses={
            "w1": frozenset({"10110"}),
            "w2": frozenset({"10011"}),
            "w3": frozenset({"11111", "00000"}),
        },
        lemmas={"w1": frozenset({"l1"}), "w2": frozenset({"l1", "l2"}), "w3": frozenset({"l3"})},
    )

    def test_hamming(self):
        assert hamming_similarity("10110", "10011") == pytest.approx(0.6)

    def test_hamming_length_mismatch(self):
        with pytest.raises(ArgumentError):
            hamming_similarity("101", "10")

    def test_tag_similarity(self):
        assert tag_similarity("w1", "w2", self.LEXICON) == pytest.approx(0.6)
        assert tag_similarity("w1", "w1", self.LEXICON) == 1.0

    def test_tag_similarity_takes_set_minimum(self):
        assert tag_similarity("w1", "w3", self.LEXICON) == pytest.approx(0.4)
        assert tag_similarity("w3", "w1", self.LEXICON) == tag_similarity("w1", "w3", self.LEXICON)

    def test_uncovered_word(self):
        with pytest.raises(NotCoveredError):
            tag_similarity("w1", "nope", self.LEXICON)

    def test_mixed_widths(self):
        with pytest.raises(ArgumentError):
            TagLexicon({"a": frozenset({"10"}), "b": frozenset({"101"})}, {"a": frozenset({"a"}), "b": frozenset({"b"})})

    def test_lemma_similarity(self):
        analyses = {f"n{i}": frozenset({"1"}) for i in range(20)}
        lemmas = {f"n{i}": frozenset({"run" if i < 5 else f"x{i}"}) for i in range(20)}
        analyses["q"], lemmas["q"] = frozenset({"1"}), frozenset({"run"})
        lexicon = TagLexicon(analyses, lemmas)
        neighbours = [f"n{i}" for i in range(20)]
        assert lemma_similarity("q", neighbours, lexicon) == 0.25
        assert lemma_similarity("q", neighbours[:5], lexicon) == 1.0
        assert lemma_similarity("q", neighbours[5:], lexicon) == 0.0

    def test_unanalysed_neighbours_count_as_misses(self):
        assert lemma_similarity("w1", ["w2", "w3", "nope", "other"], self.LEXICON) == 0.25

    def test_lemma_similarity_needs_analysed_query(self):
        with pytest.raises(NotCoveredError):
            lemma_similarity("nope", ["w1"], self.LEXICON)
        with pytest.raises(ArgumentError):
            lemma_similarity("w1", [], self.LEXICON)

    def test_load_tag_lexicon(self, tmp_path):
        path = tmp_path / "tags.tsv"
        path.write_text("kass\tkass\t1010,1000\nkassid\tkass\t1011\n\n", encoding="utf-8")
        lexicon = load_tag_lexicon(path)
        assert lexicon.analyses["kass"] == {"1010", "1000"}
        assert lexicon.lemmas["kassid"] == {"kass"}
        assert lexicon.width == 4

    @pytest.mark.parametrize(
        "text",
        ["kass\tkass\n", "kass\tkass\t10x0\n", "kass\tkass\t1010\nkoer\tkoer\t101\n", "a\ta\t1\na\ta\t1\n"],
    )
    def test_load_tag_lexicon_errors(self, tmp_path, text):
        path = tmp_path / "tags.tsv"
        path.write_text(text, encoding="utf-8")
        with pytest.raises(ParseError):
            load_tag_lexicon(path)


class TestBandReport:
    BANDS = list(FrequencyBand)

    def test_one_word_per_band(self):
        scores = [
            WordScore(word=f"w{i}", count=0, band=band.value, values={"m": i / 10})
            for i, band in enumerate(self.BANDS)
        ]
        report = band_report("t", ["m"], scores)
        assert [row.band for row in report.rows] == [b.value for b in self.BANDS]
        assert [row.values["m"] for row in report.rows] == pytest.approx([i / 10 for i in range(6)])

    def test_single_band(self):
        scores = [WordScore(word=w, count=7, band=FrequencyBand.B5_9.value, values={"m": v}) for w, v in [("a", 1.0), ("b", 0.0)]]
        report = band_report("t", ["m"], scores)
        assert len(report.rows) == 1
        assert report.rows[0].values["m"] == 0.5
        assert report.rows[0].words == 2

    def test_empty_band_is_absent(self):
        scores = [WordScore(word="a", count=60, band=FrequencyBand.B50_PLUS.value, values={"m": 1.0})]
        assert [row.band for row in band_report("t", ["m"], scores).rows] == [FrequencyBand.B50_PLUS.value]

    def test_unrepresentable_band(self):
        scores = [
            WordScore(word="a", count=1, band=FrequencyBand.B0_4.value, values={"m": None}),
            WordScore(word="b", count=30, band=FrequencyBand.B20_50.value, values={"m": 0.5}),
            WordScore(word="c", count=30, band=FrequencyBand.B20_50.value, values={"m": None}),
        ]
        rows = band_report("t", ["m"], scores).rows
        assert rows[0].values["m"] is None
        assert rows[1].values["m"] == 0.5


class TestModelEvaluation:
    def test_perplexity_is_a_token_average(self, toy_model):
        model, examples = toy_model(EncoderKind.BAG)
        once, twice = perplexities(model, examples), perplexities(model, examples + examples)
        assert twice.word_ppl == pytest.approx(once.word_ppl, rel=1e-12)
        assert twice.align_ppl == pytest.approx(once.align_ppl, rel=1e-12)
        assert once.word_ppl > 1.0 and once.align_ppl > 1.0
        assert once.align_tokens == once.word_tokens + len(examples)

    def test_perplexity_of_empty_set(self, toy_model):
        model, _ = toy_model(EncoderKind.WORD)
        with pytest.raises(ArgumentError):
            perplexities(model, [])

    def test_lexicon_embeddings_ignore_threshold(self, toy_model):
        model, _ = toy_model(EncoderKind.CNN, threshold=2)
        tokens, matrix = lexicon_embeddings(model)
        assert sorted(tokens) == ["a", "b", "c", "d"]
        assert matrix.shape == (4, model.config.encoder.source_dim)
        d_row = matrix[tokens.index("d")]
        np.testing.assert_allclose(d_row, model.encoder.representation_matrix(["d"])[0], rtol=1e-12)

    def test_semantic_evaluation(self, toy_model):
        model, _ = toy_model(EncoderKind.WORD, threshold=2)
        table = estimate_translation_table([(["a", "b", "d"], ["x", "x", "x"], [(0, 0), (1, 1), (2, 2)])])
        scores, report = semantic_evaluation(model, ["a", "b", "c", "d"], table, k=3, floor=1)
        by_word = {s.word: s for s in scores}
        assert set(by_word) == {"a", "b", "d"}
        assert by_word["a"].values["accuracy"] == 1.0
        assert by_word["d"].values["accuracy"] is None
        assert by_word["a"].band == FrequencyBand.B0_4.value
        [row] = report.rows
        assert row.words == 3 and row.values["accuracy"] == 1.0

    def test_morphology_evaluation(self, toy_model, tmp_path):
        model, _ = toy_model(EncoderKind.WORD)
        path = tmp_path / "tags.tsv"
        path.write_text("a\tl1\t110\nb\tl1\t100\nc\tl2\t011\n", encoding="utf-8")
        scores, report = morphology_evaluation(model, ["a", "b", "c", "d"], load_tag_lexicon(path), k=3)
        values = {s.word: s.values for s in scores}
        assert set(values) == {"a", "b", "c"}
        assert values["a"]["tag"] == pytest.approx(0.5)
        assert values["a"]["lemma"] == pytest.approx(1 / 3)
        assert values["b"]["tag"] == pytest.approx(1 / 3)
        assert values["c"]["lemma"] == 0.0
        assert report.metrics == ["tag", "lemma"]
        assert any("lemma" in note for note in report.notes)
