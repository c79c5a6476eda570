"""
Extrinsic (perplexity) and intrinsic (nearest-neighbour) evaluation.

Intrinsic metrics look at the source-word representations r_w learned by a
model: semantic quality through pivoted gold synonyms and multi-label
accuracy, morphology through tag-vector and lemma agreement of neighbours.
Every metric is reported per training-frequency band.
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from . import numkit as nk
from .corpus import LinkedSentence, frequency_band
from .domain import DEFAULT_NEIGHBOURS, DEFAULT_SYNONYM_FLOOR, DEFAULT_SYNONYMS, EncoderKind, FrequencyBand
from .errors import ArgumentError, NotCoveredError, NotRepresentableError, ParseError
from .osm import Example, NeuralOSM, perplexity
from .schemas import BandReport, BandRow, Neighbour, PerplexityReport, WordScore

logger = logging.getLogger(__name__)


# ============================================================
# Perplexity
# ============================================================
def perplexities(model: NeuralOSM, data: Sequence[Example]) -> PerplexityReport:
    """Corpus-level word and alignment perplexity (token averaged)."""
    if not data:
        raise ArgumentError("cannot compute perplexity of an empty set")
    score = model.score_corpus(data)
    return PerplexityReport(
        word_ppl=perplexity(score.log_word, score.word_decisions) if score.word_decisions else 1.0,
        align_ppl=perplexity(score.log_align, score.align_decisions),
        word_tokens=score.word_decisions,
        align_tokens=score.align_decisions,
    )


# ============================================================
# Nearest neighbours
# ============================================================
class NeighbourIndex:
    """Cosine search over a fixed lexicon; row order doubles as the tie-break id."""

    def __init__(self, tokens: Sequence[str], matrix: np.ndarray) -> None:
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(tokens):
            raise ArgumentError(f"{len(tokens)} tokens but a matrix of shape {matrix.shape}")
        self.tokens = list(tokens)
        norms = np.linalg.norm(matrix, axis=1)
        self._unit = matrix / np.where(norms > 0, norms, 1.0)[:, None]

    @classmethod
    def from_model(cls, model: NeuralOSM) -> "NeighbourIndex":
        tokens, matrix = lexicon_embeddings(model)
        return cls(tokens, matrix)

    def __len__(self) -> int:
        return len(self.tokens)

    def nearest(self, vector: np.ndarray, k: int = DEFAULT_NEIGHBOURS, exclude: Optional[str] = None) -> List[Neighbour]:
        if k < 1:
            raise ArgumentError(f"k must be positive, got {k}")
        vector = np.asarray(vector, dtype=np.float64)
        norm = np.linalg.norm(vector)
        if norm == 0:
            sims = np.zeros(len(self.tokens))
        else:
            sims = self._unit @ (vector / norm)
        order = np.lexsort((np.arange(len(self.tokens)), -sims))
        result: List[Neighbour] = []
        for index in order:
            if self.tokens[index] == exclude:
                continue
            result.append(Neighbour(word=self.tokens[index], similarity=float(sims[index])))
            if len(result) == k:
                break
        return result


def lexicon_embeddings(model: NeuralOSM) -> Tuple[List[str], np.ndarray]:
    """r_w for every training type, threshold ignored."""
    tokens = model.source_vocab.lexicon()
    return tokens, model.encoder.representation_matrix(tokens)


def nearest_neighbors(
    tokens: Sequence[str],
    matrix: np.ndarray,
    query: np.ndarray,
    k: int = DEFAULT_NEIGHBOURS,
    exclude: Optional[str] = None,
) -> List[Neighbour]:
    return NeighbourIndex(tokens, matrix).nearest(query, k, exclude)


def is_representable(model: NeuralOSM, word: str) -> bool:
    return model.config.encoder.kind != EncoderKind.WORD or model.source_vocab.is_common(word)


def word_neighbors(
    model: NeuralOSM,
    word: str,
    k: int = DEFAULT_NEIGHBOURS,
    index: Optional[NeighbourIndex] = None,
) -> List[Neighbour]:
    """Top-k lexicon neighbours of ``word`` under the model's r_w."""
    if not is_representable(model, word):
        raise NotRepresentableError(f"{word!r} has no representation of its own under the word encoder")
    index = index or NeighbourIndex.from_model(model)
    with nk.no_grad():
        vector = model.encoder.represent_word(word).vector.data
    return index.nearest(vector, k, exclude=word)


# ============================================================
# Gold synonyms by pivoting
# ============================================================
@dataclass
class TranslationTable:
    """p(f|e) and p(e′|f) as relative link frequencies; e is the source side.

    ``source_counts`` holds corpus occurrences of each source token, aligned or not.
    """

    forward: Dict[str, Dict[str, float]]
    backward: Dict[str, Dict[str, float]]
    source_counts: Dict[str, int] = field(default_factory=dict)
    source_ids: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.source_ids:
            for e in self.forward:
                self.source_ids.setdefault(e, len(self.source_ids))
            for distribution in self.backward.values():
                for e in distribution:
                    self.source_ids.setdefault(e, len(self.source_ids))

    def count(self, e: str) -> int:
        return self.source_counts.get(e, 0)


def _normalise(counts: Mapping[str, Counter]) -> Dict[str, Dict[str, float]]:
    table: Dict[str, Dict[str, float]] = {}
    for given, outcomes in counts.items():
        total = sum(outcomes.values())
        table[given] = {outcome: n / total for outcome, n in outcomes.items()}
    return table


def estimate_translation_table(bitext: Iterable[LinkedSentence]) -> TranslationTable:
    """Count every (e, f) link; unaligned words never enter the table but still count as occurrences."""
    forward: Dict[str, Counter] = defaultdict(Counter)
    backward: Dict[str, Counter] = defaultdict(Counter)
    occurrences: Counter = Counter()
    ids: Dict[str, int] = {}
    for source, target, links in bitext:
        occurrences.update(source)
        for src, tgt in links:
            e, f = source[src], target[tgt]
            ids.setdefault(e, len(ids))
            forward[e][f] += 1
            backward[f][e] += 1
    if not forward:
        raise ArgumentError("no alignment links to estimate a translation table from")
    logger.info("translation table: %d source words, %d target words", len(forward), len(backward))
    return TranslationTable(_normalise(forward), _normalise(backward), dict(occurrences), ids)


def pivot_distribution(table: TranslationTable, e: str) -> Dict[str, float]:
    """p(e′|e) = Σ_f p(f|e) · p(e′|f) over the whole source vocabulary."""
    if e not in table.forward:
        raise NotCoveredError(f"{e!r} has no translations in the table")
    scores: Dict[str, float] = defaultdict(float)
    for f, p_f in table.forward[e].items():
        for e2, p_e2 in table.backward.get(f, {}).items():
            scores[e2] += p_f * p_e2
    return dict(scores)


def pivot_synonyms(
    table: TranslationTable,
    e: str,
    top: int = DEFAULT_SYNONYMS,
    floor: int = DEFAULT_SYNONYM_FLOOR,
) -> List[Tuple[str, float]]:
    if e not in table.forward:
        raise NotCoveredError(f"{e!r} has no translations in the table")
    if table.count(e) < floor:
        raise NotCoveredError(f"{e!r} occurs {table.count(e)} times, below the floor of {floor}")
    scores = pivot_distribution(table, e)
    ranked = sorted(
        ((word, p) for word, p in scores.items() if word != e),
        key=lambda item: (-item[1], table.source_ids.get(item[0], len(table.source_ids))),
    )
    return ranked[:top]


def multilabel_accuracy(items: Sequence[Tuple[Set[str], Set[str]]]) -> float:
    """Share of (gold, neighbours) pairs that overlap."""
    if not items:
        raise ArgumentError("multi-label accuracy over an empty word set")
    return sum(1 for gold, found in items if set(gold) & set(found)) / len(items)


# ============================================================
# Morphological agreement
# ============================================================
@dataclass
class TagLexicon:
    """Per word: the set of grammatical-feature bit vectors and the set of lemmas."""

    analyses: Dict[str, FrozenSet[str]]
    lemmas: Dict[str, FrozenSet[str]]

    def __post_init__(self) -> None:
        widths = {len(bits) for analyses in self.analyses.values() for bits in analyses}
        if len(widths) > 1:
            raise ArgumentError(f"bit vectors of different lengths: {sorted(widths)}")
        self.width = widths.pop() if widths else 0

    def covers(self, word: str) -> bool:
        return word in self.analyses


def load_tag_lexicon(path: str | Path) -> TagLexicon:
    """``word<TAB>lemma1,lemma2<TAB>bits1,bits2`` lines."""
    analyses: Dict[str, FrozenSet[str]] = {}
    lemmas: Dict[str, FrozenSet[str]] = {}
    width: Optional[int] = None
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError("expected 'word<TAB>lemmas<TAB>bit vectors'", str(path), line_no)
            word, lemma_field, bits_field = fields
            word_lemmas = frozenset(x for x in lemma_field.split(",") if x)
            word_bits = frozenset(x for x in bits_field.split(",") if x)
            if not word or not word_lemmas or not word_bits:
                raise ParseError("empty word, lemma set or analysis set", str(path), line_no)
            for bits in word_bits:
                if set(bits) - {"0", "1"}:
                    raise ParseError(f"not a bit vector: {bits!r}", str(path), line_no)
                if width is None:
                    width = len(bits)
                elif len(bits) != width:
                    raise ParseError(f"bit vector of length {len(bits)}, expected {width}", str(path), line_no)
            if word in analyses:
                raise ParseError(f"duplicate entry for {word!r}", str(path), line_no)
            analyses[word] = word_bits
            lemmas[word] = word_lemmas
    logger.info("loaded tag analyses for %d words from %s", len(analyses), path)
    return TagLexicon(analyses, lemmas)


def hamming_similarity(a: str, b: str) -> float:
    if len(a) != len(b) or not a:
        raise ArgumentError(f"cannot compare bit vectors {a!r} and {b!r}")
    return sum(1 for x, y in zip(a, b) if x == y) / len(a)


def tag_similarity(w1: str, w2: str, lexicon: TagLexicon) -> float:
    """Minimum Hamming similarity over all cross pairs of analyses."""
    for word in (w1, w2):
        if not lexicon.covers(word):
            raise NotCoveredError(f"{word!r} has no morphological analysis")
    return min(hamming_similarity(a, b) for a in lexicon.analyses[w1] for b in lexicon.analyses[w2])


def lemma_similarity(word: str, neighbours: Sequence[str], lexicon: TagLexicon) -> float:
    """Fraction of the neighbours sharing a lemma with ``word``; unanalysed neighbours count as misses."""
    if not lexicon.covers(word):
        raise NotCoveredError(f"{word!r} has no morphological analysis")
    if not neighbours:
        raise ArgumentError(f"no neighbours given for {word!r}")
    own = lexicon.lemmas[word]
    return sum(1 for n in neighbours if lexicon.covers(n) and own & lexicon.lemmas[n]) / len(neighbours)


# ============================================================
# Frequency-band reports
# ============================================================
def band_report(title: str, metrics: Sequence[str], scores: Iterable[WordScore], notes: Sequence[str] = ()) -> BandReport:
    """Mean of each metric per band; bands without words are left out."""
    by_band: Dict[str, List[WordScore]] = defaultdict(list)
    for score in scores:
        by_band[score.band].append(score)
    rows: List[BandRow] = []
    for band in FrequencyBand:
        members = by_band.get(band.value)
        if not members:
            continue
        values: Dict[str, Optional[float]] = {}
        for metric in metrics:
            observed = [s.values.get(metric) for s in members if s.values.get(metric) is not None]
            values[metric] = float(np.mean(observed)) if observed else None
        rows.append(BandRow(band=band.value, words=len(members), values=values))
    return BandReport(title=title, metrics=list(metrics), rows=rows, notes=list(notes))


def _unique(words: Iterable[str]) -> List[str]:
    return list(dict.fromkeys(w for w in words if w))


def semantic_evaluation(
    model: NeuralOSM,
    test_words: Iterable[str],
    table: TranslationTable,
    k: int = DEFAULT_NEIGHBOURS,
    top: int = DEFAULT_SYNONYMS,
    floor: int = DEFAULT_SYNONYM_FLOOR,
    index: Optional[NeighbourIndex] = None,
) -> Tuple[List[WordScore], BandReport]:
    """Multi-label accuracy of top-k neighbours against pivoted gold synonyms."""
    index = index or NeighbourIndex.from_model(model)
    scores: List[WordScore] = []
    skipped = 0
    for word in _unique(test_words):
        try:
            gold = {e for e, _ in pivot_synonyms(table, word, top, floor)}
        except NotCoveredError as exc:
            logger.debug("skipping %s", exc)
            skipped += 1
            continue
        count = model.source_vocab.count(word)
        band = frequency_band(count).value
        try:
            found = [n.word for n in word_neighbors(model, word, k, index)]
        except NotRepresentableError:
            scores.append(WordScore(word=word, count=count, band=band, values={"accuracy": None}))
            continue
        hit = multilabel_accuracy([(gold, set(found))])
        scores.append(WordScore(word=word, count=count, band=band, values={"accuracy": hit}, neighbours=found))
    if skipped:
        logger.warning("%d query words had no gold synonyms and were skipped", skipped)
    notes = [f"k={k}, gold synonyms={top}, gold floor={floor}", f"{skipped} words without gold synonyms skipped"]
    return scores, band_report("multi-label accuracy", ["accuracy"], scores, notes)


def morphology_evaluation(
    model: NeuralOSM,
    test_words: Iterable[str],
    lexicon: TagLexicon,
    k: int = DEFAULT_NEIGHBOURS,
    index: Optional[NeighbourIndex] = None,
) -> Tuple[List[WordScore], BandReport]:
    """Mean tag similarity and lemma agreement between each word and its neighbours."""
    index = index or NeighbourIndex.from_model(model)
    scores: List[WordScore] = []
    skipped = 0
    for word in _unique(test_words):
        if not lexicon.covers(word):
            logger.debug("skipping %r: no morphological analysis", word)
            skipped += 1
            continue
        count = model.source_vocab.count(word)
        band = frequency_band(count).value
        try:
            found = [n.word for n in word_neighbors(model, word, k, index)]
        except NotRepresentableError:
            scores.append(WordScore(word=word, count=count, band=band, values={"tag": None, "lemma": None}))
            continue
        covered = [n for n in found if lexicon.covers(n)]
        tag = float(np.mean([tag_similarity(word, n, lexicon) for n in covered])) if covered else None
        lemma = lemma_similarity(word, found, lexicon) if found else None
        scores.append(
            WordScore(word=word, count=count, band=band, values={"tag": tag, "lemma": lemma}, neighbours=found)
        )
    if skipped:
        logger.warning("%d query words had no morphological analysis and were skipped", skipped)
    notes = [
        f"k={k}",
        "lemma = fraction of the k neighbours sharing a lemma with the query",
        f"{skipped} words without analyses skipped",
    ]
    return scores, band_report("morphological similarity", ["tag", "lemma"], scores, notes)
