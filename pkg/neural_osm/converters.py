from __future__ import annotations

from typing import List, Optional, Sequence

from .schemas import (
    BandReport,
    CandidateFeatures,
    CorpusStats,
    EpochRecord,
    Neighbour,
    PerplexityReport,
    Result,
    WordScore,
)

MISSING = "−"


def format_value(value: Optional[float], digits: int = 4) -> str:
    """Fixed-point number, or the "−" marker for values a model cannot produce."""
    if value is None:
        return MISSING
    return f"{value:.{digits}f}"


def render_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    """Plain-text table with left-aligned, space-padded columns."""
    widths = [len(h) for h in header]
    for row in rows:
        widths = [max(w, len(cell)) for w, cell in zip(widths, row)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(lines)


def build_candidate_features(sent_id: str, result: Result) -> Optional[CandidateFeatures]:
    """DTO for a scored candidate; ``None`` when scoring failed."""
    if not result.success:
        return None
    return CandidateFeatures(
        sent_id=sent_id,
        candidate=result.data["candidate"],
        log_align=result.data["log_align"],
        log_word=result.data["log_word"],
    )


def candidate_row(sent_id: str, index: int, result: Result) -> List[str]:
    features = build_candidate_features(sent_id, result)
    if features is None:
        return [sent_id, str(index), MISSING, MISSING, result.error_code or ""]
    return [sent_id, str(index), format(features.log_align, ".17g"), format(features.log_word, ".17g"), ""]


def epoch_row(record: EpochRecord) -> List[str]:
    return [
        str(record.epoch),
        f"{record.train_loss:.6f}",
        format_value(record.dev_log_likelihood, 6),
        format_value(record.dev_word_ppl),
        format_value(record.dev_align_ppl),
        f"{record.learning_rate:g}",
        "yes" if record.improved else "no",
    ]


def perplexity_rows(report: PerplexityReport) -> List[List[str]]:
    return [
        ["word", format_value(report.word_ppl), str(report.word_tokens)],
        ["alignment", format_value(report.align_ppl), str(report.align_tokens)],
    ]


def neighbour_row(word: str, neighbours: Optional[Sequence[Neighbour]]) -> List[str]:
    """``None`` neighbours = word cannot be represented."""
    if neighbours is None:
        return [word, MISSING]
    return [word, " ".join(f"{n.word}:{n.similarity:.4f}" for n in neighbours)]


def word_score_row(score: WordScore, metrics: Sequence[str]) -> List[str]:
    return (
        [score.word, str(score.count), score.band]
        + [format_value(score.values.get(m)) for m in metrics]
        + [" ".join(score.neighbours)]
    )


def band_rows(report: BandReport) -> List[List[str]]:
    return [[row.band, str(row.words)] + [format_value(row.values.get(m)) for m in report.metrics] for row in report.rows]


def stats_rows(name: str, stats: CorpusStats) -> List[str]:
    return [name, str(stats.tokens), str(stats.types), str(stats.oov_types), f"{100 * stats.oov_rate:.2f}"]
