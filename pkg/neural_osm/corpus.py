"""
Parallel-corpus ingestion and the alignment ↔ operation-sequence bijection.

Index convention: source positions are 1…|s|, 0 is NULL and |s|+1 is FINISH.
Alignment files use 0-based Pharaoh ``i-j`` pairs (source-target).
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

from .domain import FINISH_MARKER, PAD_UNIT, START, UNK, UNK_UNIT, FrequencyBand, UnitMode
from .errors import ArgumentError, ContractError, EmptyCorpusError, ParseError
from .schemas import CorpusStats

logger = logging.getLogger(__name__)

_LINK = re.compile(r"^(\d+)-(\d+)$")


# ============================================================
# Vocabulary
# ============================================================
class Vocabulary:
    """
    Token ↔ id map with training counts.

    Ids are dense: 0 = UNK, 1 = START, then tokens at or above the threshold
    (most frequent first), then the rare tokens. Rare ids are kept so that
    counts stay queryable for the full lexicon, but :meth:`lookup` folds them
    into UNK. Models size their tables by :attr:`size`.
    """

    def __init__(self, tokens: Sequence[str], counts: Sequence[int], threshold: int) -> None:
        if list(tokens[:2]) != [UNK, START]:
            raise ContractError("vocabulary must start with the UNK and START symbols")
        if len(tokens) != len(counts):
            raise ContractError("one count per token required")
        self.threshold = threshold
        self._tokens = list(tokens)
        self._counts = [int(c) for c in counts]
        self._ids = {token: i for i, token in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise ContractError("duplicate token in vocabulary")
        common = 2
        while common < len(self._tokens) and self._counts[common] >= threshold:
            common += 1
        self.size = common

    unk_id = 0
    start_id = 1

    @classmethod
    def from_counts(cls, counts: Mapping[str, int], threshold: int) -> "Vocabulary":
        counts = dict(counts)
        reserved = [counts.pop(UNK, 0), counts.pop(START, 0)]
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        common = [kv for kv in ranked if kv[1] >= threshold]
        rare = [kv for kv in ranked if kv[1] < threshold]
        ordered = common + rare
        return cls(
            [UNK, START] + [token for token, _ in ordered],
            reserved + [count for _, count in ordered],
            threshold,
        )

    def lookup(self, token: str) -> int:
        """Model id: UNK for unseen or below-threshold tokens."""
        index = self._ids.get(token)
        if index is None or index >= self.size:
            return self.unk_id
        return index

    def index(self, token: str) -> Optional[int]:
        """Raw id over the whole lexicon, or None when never seen."""
        return self._ids.get(token)

    def token(self, index: int) -> str:
        return self._tokens[index]

    def count(self, token: str) -> int:
        index = self._ids.get(token)
        return 0 if index is None else self._counts[index]

    def is_common(self, token: str) -> bool:
        index = self._ids.get(token)
        return index is not None and index < self.size

    @property
    def tokens(self) -> List[str]:
        return list(self._tokens)

    @property
    def counts(self) -> List[int]:
        return list(self._counts)

    def lexicon(self) -> List[str]:
        """Every observed token (no threshold), reserved symbols excluded."""
        return self._tokens[2:]

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids


def build_vocab(token_stream: Iterable[str], threshold: int = 5) -> Vocabulary:
    if threshold < 0:
        raise ArgumentError(f"threshold must be non-negative, got {threshold}")
    counts = Counter(token_stream)
    if not counts:
        raise EmptyCorpusError("cannot build a vocabulary from an empty token stream")
    vocab = Vocabulary.from_counts(counts, threshold)
    logger.info("vocabulary: %d types, %d at or above threshold %d", len(vocab) - 2, vocab.size - 2, threshold)
    return vocab


# ============================================================
# Sub-word segmentation
# ============================================================
class Segmentation(NamedTuple):
    unit_ids: Tuple[int, ...]
    fallback: bool


class SegmentationLexicon:
    """Word → sub-word units, plus the unit inventory (0 = padding, 1 = unknown unit)."""

    pad_id = 0
    unk_id = 1

    def __init__(self, mode: UnitMode, units: Sequence[str], entries: Optional[Mapping[str, Sequence[str]]] = None) -> None:
        if list(units[:2]) != [PAD_UNIT, UNK_UNIT]:
            raise ContractError("unit inventory must start with the padding and unknown units")
        self.mode = UnitMode(mode)
        self._units = list(units)
        self._unit_ids = {unit: i for i, unit in enumerate(self._units)}
        self._entries: Dict[str, Tuple[str, ...]] = {w: tuple(us) for w, us in (entries or {}).items()}

    @classmethod
    def for_characters(cls, words: Iterable[str]) -> "SegmentationLexicon":
        chars = sorted({ch for word in words for ch in word})
        return cls(UnitMode.CHAR, [PAD_UNIT, UNK_UNIT] + chars)

    @classmethod
    def from_entries(cls, entries: Mapping[str, Sequence[str]], words: Iterable[str] = ()) -> "SegmentationLexicon":
        """Morph lexicon; ``words`` without a segmentation become single whole-word units."""
        inventory = {unit for units in entries.values() for unit in units}
        inventory.update(word for word in words if word not in entries)
        return cls(UnitMode.MORPH, [PAD_UNIT, UNK_UNIT] + sorted(inventory), entries)

    @property
    def units(self) -> List[str]:
        return list(self._units)

    @property
    def entries(self) -> Dict[str, Tuple[str, ...]]:
        return dict(self._entries)

    @property
    def size(self) -> int:
        return len(self._units)

    def unit_id(self, unit: str) -> int:
        return self._unit_ids.get(unit, self.unk_id)

    def unit(self, index: int) -> str:
        return self._units[index]

    def covers(self, word: str) -> bool:
        return self.mode == UnitMode.CHAR or word in self._entries

    def split(self, word: str) -> Tuple[Tuple[str, ...], bool]:
        """Unit strings for ``word`` and whether the whole-word fallback was used."""
        if not word:
            raise ArgumentError("cannot segment an empty word")
        if self.mode == UnitMode.CHAR:
            return tuple(word), False
        units = self._entries.get(word)
        if units is None:
            logger.debug("no segmentation for %r; using the whole word as one unit", word)
            return (word,), True
        return units, False

    def segment(self, word: str) -> Segmentation:
        units, fallback = self.split(word)
        return Segmentation(tuple(self.unit_id(u) for u in units), fallback)


def segment_word(word: str, lexicon: SegmentationLexicon) -> Segmentation:
    return lexicon.segment(word)


def load_segmentations(path: str | Path) -> Dict[str, Tuple[str, ...]]:
    """Read ``word<TAB>unit unit unit`` lines (Morfessor output, preprocessed)."""
    entries: Dict[str, Tuple[str, ...]] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ParseError("expected 'word<TAB>units'", str(path), line_no)
            word, units_field = line.split("\t", 1)
            units = tuple(units_field.split())
            if not word or not units:
                raise ParseError("empty word or unit list", str(path), line_no)
            if word in entries:
                raise ParseError(f"duplicate segmentation for {word!r}", str(path), line_no)
            entries[word] = units
    logger.info("loaded %d segmentations from %s", len(entries), path)
    return entries


# ============================================================
# Sentence pairs and operation sequences
# ============================================================
@dataclass(frozen=True)
class AlignedSentencePair:
    """
    Source surface tokens, target ids and a per-target-word source index.

    The source side stays as tokens because sub-word encoders need the word
    identity that a rare word's UNK id would discard.
    """

    source: Tuple[str, ...]
    target: Tuple[int, ...]
    align: Tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.align) != len(self.target):
            raise ContractError(f"{len(self.target)} target words but {len(self.align)} alignment entries")
        limit = len(self.source)
        for position in self.align:
            if not 0 <= position <= limit:
                raise ContractError(f"alignment index {position} outside 0..{limit}")


class OperationStep(NamedTuple):
    jump: int
    word: Optional[int]


@dataclass(frozen=True)
class OperationSequence:
    steps: Tuple[OperationStep, ...]
    source_length: int

    @property
    def finish(self) -> int:
        return self.source_length + 1

    def __len__(self) -> int:
        return len(self.steps)


def extract_operations(pair: AlignedSentencePair) -> OperationSequence:
    """Read the jumps off the alignment, scanning target words left to right."""
    steps = [OperationStep(jump, word) for jump, word in zip(pair.align, pair.target)]
    steps.append(OperationStep(len(pair.source) + 1, None))
    return OperationSequence(tuple(steps), len(pair.source))


def replay_operations(ops: OperationSequence, source_length: int) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
    """Inverse of :func:`extract_operations`: returns (target, align)."""
    finish = source_length + 1
    if not ops.steps or ops.steps[-1].jump != finish or ops.steps[-1].word is not None:
        raise ContractError("operation sequence must end with FINISH")
    target: List[int] = []
    align: List[int] = []
    for step in ops.steps[:-1]:
        if step.jump == finish or step.word is None:
            raise ContractError("FINISH may only appear as the last operation")
        if not 0 <= step.jump <= source_length:
            raise ContractError(f"jump target {step.jump} outside 0..{source_length}")
        target.append(step.word)
        align.append(step.jump)
    return tuple(target), tuple(align)


def format_operations(ops: OperationSequence, target_vocab: Vocabulary) -> str:
    """``jump:word … FINISH`` with 1-based source positions, 0 = NULL."""
    parts = [f"{step.jump}:{target_vocab.token(step.word)}" for step in ops.steps[:-1]]
    parts.append(FINISH_MARKER)
    return " ".join(parts)


# ============================================================
# File readers
# ============================================================
def read_sentences(path: str | Path) -> List[List[str]]:
    with open(path, encoding="utf-8") as handle:
        sentences = [line.split() for line in handle]
    logger.info("read %d sentences from %s", len(sentences), path)
    return sentences


def parse_links(
    line: str,
    source_length: int,
    target_length: int,
    path: Optional[str] = None,
    line_no: Optional[int] = None,
) -> List[Tuple[int, int]]:
    """Every 0-based (source, target) link on one Pharaoh line."""
    links: List[Tuple[int, int]] = []
    for token in line.split():
        match = _LINK.match(token)
        if match is None:
            raise ParseError(f"malformed alignment link {token!r}", path, line_no)
        src, tgt = int(match.group(1)), int(match.group(2))
        if src >= source_length or tgt >= target_length:
            raise ParseError(
                f"link {token!r} out of range for |s|={source_length}, |t|={target_length}", path, line_no
            )
        links.append((src, tgt))
    return links


def parse_alignment_line(
    line: str,
    source_length: int,
    target_length: int,
    path: Optional[str] = None,
    line_no: Optional[int] = None,
) -> Tuple[int, ...]:
    """One Pharaoh line → per-target 1-based source index (0 = NULL, smallest link wins)."""
    align = [0] * target_length
    for src, tgt in parse_links(line, source_length, target_length, path, line_no):
        if align[tgt] == 0 or src + 1 < align[tgt]:
            align[tgt] = src + 1
    return tuple(align)


def load_alignments(path: str | Path, lengths: Sequence[Tuple[int, int]]) -> List[Tuple[int, ...]]:
    """``lengths`` holds (|s|, |t|) per sentence pair, in file order."""
    alignments: List[Tuple[int, ...]] = []
    with open(path, encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if len(lines) != len(lengths):
        raise ParseError(f"{len(lines)} alignment lines for {len(lengths)} sentence pairs", str(path))
    for line_no, (line, (src_len, tgt_len)) in enumerate(zip(lines, lengths), start=1):
        alignments.append(parse_alignment_line(line, src_len, tgt_len, str(path), line_no))
    return alignments


LinkedSentence = Tuple[List[str], List[str], List[Tuple[int, int]]]


def load_linked_bitext(
    source_path: str | Path,
    target_path: str | Path,
    alignment_path: str | Path,
) -> List[LinkedSentence]:
    """Surface tokens on both sides with all alignment links kept."""
    sources = read_sentences(source_path)
    targets = read_sentences(target_path)
    if len(sources) != len(targets):
        raise ParseError(f"{len(sources)} source lines but {len(targets)} target lines", str(target_path))
    with open(alignment_path, encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if len(lines) != len(sources):
        raise ParseError(f"{len(lines)} alignment lines for {len(sources)} sentence pairs", str(alignment_path))
    return [
        (src, tgt, parse_links(line, len(src), len(tgt), str(alignment_path), line_no))
        for line_no, (src, tgt, line) in enumerate(zip(sources, targets, lines), start=1)
    ]


def load_parallel_corpus(
    source_path: str | Path,
    target_path: str | Path,
    alignment_path: str | Path,
    target_vocab: Vocabulary,
) -> List[AlignedSentencePair]:
    sources = read_sentences(source_path)
    targets = read_sentences(target_path)
    if len(sources) != len(targets):
        raise ParseError(f"{len(sources)} source lines but {len(targets)} target lines", str(target_path))
    lengths = [(len(s), len(t)) for s, t in zip(sources, targets)]
    alignments = load_alignments(alignment_path, lengths)
    return [
        AlignedSentencePair(tuple(src), tuple(target_vocab.lookup(w) for w in tgt), align)
        for src, tgt, align in zip(sources, targets, alignments)
    ]


# ============================================================
# Frequency analysis
# ============================================================
_BANDS = (
    (4, FrequencyBand.B0_4),
    (9, FrequencyBand.B5_9),
    (14, FrequencyBand.B10_14),
    (19, FrequencyBand.B15_19),
    (50, FrequencyBand.B20_50),
)


def frequency_band(count: int) -> FrequencyBand:
    if count < 0:
        raise ArgumentError(f"count must be non-negative, got {count}")
    for upper, band in _BANDS:
        if count <= upper:
            return band
    return FrequencyBand.B50_PLUS


def corpus_statistics(train_vocab: Vocabulary, tokens: Iterable[str]) -> CorpusStats:
    counts = Counter(tokens)
    if not counts:
        raise EmptyCorpusError("no tokens to describe")
    oov = sum(1 for token in counts if not train_vocab.is_common(token))
    return CorpusStats(
        tokens=sum(counts.values()),
        types=len(counts),
        oov_types=oov,
        oov_rate=oov / len(counts),
    )


def reconstruction_rate(words: Iterable[str], lexicon: SegmentationLexicon) -> float:
    """Fraction of ``words`` that segment without the whole-word fallback."""
    words = [w for w in words if w]
    if not words:
        raise ArgumentError("no words to reconstruct")
    return sum(1 for w in words if lexicon.covers(w)) / len(words)
