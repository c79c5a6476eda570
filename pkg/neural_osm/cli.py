"""
Command-line entry point: ``neural-osm <command> [options]``.

Every report command prints an aligned table to stdout and writes the same
content as TSV into ``--out``. Exit codes: 0 success, 2 usage or input
problems, 3 numeric failure (divergence, failed gradient check).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from . import numkit as nk
from .config import LOG_LEVEL, SHOW_PROGRESS, merge_config, read_config_file
from .converters import (
    band_rows,
    candidate_row,
    epoch_row,
    format_value,
    neighbour_row,
    perplexity_rows,
    render_table,
    stats_rows,
    word_score_row,
)
from .corpus import (
    AlignedSentencePair,
    SegmentationLexicon,
    Vocabulary,
    build_vocab,
    corpus_statistics,
    extract_operations,
    format_operations,
    load_linked_bitext,
    load_parallel_corpus,
    load_segmentations,
    parse_alignment_line,
    read_sentences,
    reconstruction_rate,
)
from .domain import GRADCHECK_STEP, GRADCHECK_TOLERANCE, EncoderKind, UnitMode
from .errors import ArgumentError, NeuralOsmError, NotRepresentableError, ParseError
from .evaluation import (
    NeighbourIndex,
    estimate_translation_table,
    load_tag_lexicon,
    morphology_evaluation,
    perplexities,
    semantic_evaluation,
    word_neighbors,
)
from .osm import Example, NeuralOSM, score_nbest, train
from .repository import ModelRepository
from .responses import from_exception
from .schemas import RunConfig, WordScore

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3

DEFAULT_ARCHIVE_NAME = "model.osm"


# ============================================================
# Shared helpers
# ============================================================
def _require(run: RunConfig, *fields: str) -> None:
    missing = [f"--{name.replace('_', '-')}" for name in fields if getattr(run, name) is None]
    if missing:
        raise ArgumentError(f"missing required option(s): {', '.join(missing)}")


def _out_dir(run: RunConfig) -> Path:
    path = Path(run.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _archive_path(run: RunConfig) -> Path:
    return Path(run.archive) if run.archive else Path(run.out) / DEFAULT_ARCHIVE_NAME


def write_tsv(path: Path, header: Sequence[str], rows: Sequence[Sequence[str]]) -> Path:
    lines = ["\t".join(header)] + ["\t".join(row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("wrote %s (%d rows)", path, len(rows))
    return path


def _report(run: RunConfig, name: str, header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    print(render_table(header, rows))
    write_tsv(_out_dir(run) / f"{name}.tsv", header, rows)


def _build_lexicon(run: RunConfig, words: Sequence[str]) -> SegmentationLexicon:
    if run.unit_mode == UnitMode.MORPH:
        _require(run, "segmentations")
        return SegmentationLexicon.from_entries(load_segmentations(run.segmentations), words)
    return SegmentationLexicon.for_characters(words)


def _training_vocabularies(run: RunConfig) -> Tuple[Vocabulary, Vocabulary]:
    _require(run, "source", "target")
    source_vocab = build_vocab((w for s in read_sentences(run.source) for w in s), run.threshold)
    target_vocab = build_vocab((w for s in read_sentences(run.target) for w in s), run.threshold)
    return source_vocab, target_vocab


def _examples(pairs: Sequence[AlignedSentencePair]) -> List[Example]:
    return [(pair, extract_operations(pair)) for pair in pairs]


def _load_model(run: RunConfig) -> NeuralOSM:
    model, _ = ModelRepository(_archive_path(run)).load()
    return model


def _query_words(run: RunConfig, words: Sequence[str] = ()) -> List[str]:
    if words:
        return list(words)
    if run.queries:
        return [line.strip() for line in Path(run.queries).read_text(encoding="utf-8").splitlines() if line.strip()]
    if run.test_source:
        return [w for sentence in read_sentences(run.test_source) for w in sentence]
    raise ArgumentError("give query words, --queries or --test-source")


def build_model(run: RunConfig) -> Tuple[NeuralOSM, List[Example]]:
    """Fresh model plus the training examples it was sized for."""
    _require(run, "alignments", "seed")
    source_vocab, target_vocab = _training_vocabularies(run)
    config = run.model_settings()
    lexicon = _build_lexicon(run, source_vocab.lexicon()) if config.encoder.uses_units else None
    pairs = load_parallel_corpus(run.source, run.target, run.alignments, target_vocab)
    model = NeuralOSM(config, source_vocab, target_vocab, lexicon, run.seed)
    return model, _examples(pairs)


# ============================================================
# Commands
# ============================================================
def cmd_vocab(run: RunConfig, args: argparse.Namespace) -> int:
    source_vocab, target_vocab = _training_vocabularies(run)
    out = _out_dir(run)
    header = ["id", "token", "count", "common"]
    for name, vocab in (("source", source_vocab), ("target", target_vocab)):
        rows = [[str(i), t, str(c), "1" if i < vocab.size else "0"] for i, (t, c) in enumerate(zip(vocab.tokens, vocab.counts))]
        write_tsv(out / f"vocab.{name}.tsv", header, rows)
    summary = [
        [name, str(len(vocab) - 2), str(vocab.size - 2), str(run.threshold)]
        for name, vocab in (("source", source_vocab), ("target", target_vocab))
    ]
    print(render_table(["side", "types", "in vocabulary", "threshold"], summary))
    return EXIT_OK


def cmd_segment(run: RunConfig, args: argparse.Namespace) -> int:
    _require(run, "source")
    words = sorted({w for s in read_sentences(run.source) for w in s})
    lexicon = _build_lexicon(run, words)
    rows = []
    for word in words:
        units, fallback = lexicon.split(word)
        rows.append([word, " ".join(units), "1" if fallback else "0"])
    write_tsv(_out_dir(run) / "segments.tsv", ["word", "units", "fallback"], rows)
    covered = sum(1 for row in rows if row[2] == "0")
    print(
        render_table(
            ["mode", "words", "segmented", "units"],
            [[lexicon.mode.value, str(len(words)), str(covered), str(lexicon.size - 2)]],
        )
    )
    return EXIT_OK


def cmd_ops(run: RunConfig, args: argparse.Namespace) -> int:
    _require(run, "alignments")
    _, target_vocab = _training_vocabularies(run)
    pairs = load_parallel_corpus(run.source, run.target, run.alignments, target_vocab)
    path = _out_dir(run) / "ops.txt"
    lines = [format_operations(extract_operations(pair), target_vocab) for pair in pairs]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    print(f"{len(lines)} operation sequences written to {path}")
    return EXIT_OK


def cmd_train(run: RunConfig, args: argparse.Namespace) -> int:
    _require(run, "dev_source", "dev_target", "dev_alignments")
    model, train_data = build_model(run)
    dev_pairs = load_parallel_corpus(run.dev_source, run.dev_target, run.dev_alignments, model.target_vocab)
    log = train(model, train_data, _examples(dev_pairs), run.train_settings(progress=SHOW_PROGRESS))

    archive = ModelRepository(_archive_path(run)).save(model, run)
    header = ["epoch", "train_loss", "dev_ll", "dev_word_ppl", "dev_align_ppl", "lr", "improved"]
    _report(run, "train_log", header, [epoch_row(r) for r in log.epochs])
    print(f"stopped: {log.stop_reason}; best epoch {log.best_epoch}; archive {archive}")
    return EXIT_OK


def cmd_ppl(run: RunConfig, args: argparse.Namespace) -> int:
    _require(run, "source", "target", "alignments")
    model = _load_model(run)
    pairs = load_parallel_corpus(run.source, run.target, run.alignments, model.target_vocab)
    report = perplexities(model, _examples(pairs))
    _report(run, "ppl", ["decision", "perplexity", "tokens"], perplexity_rows(report))
    return EXIT_OK


def parse_nbest_line(line: str, path: str, line_no: int) -> Tuple[str, List[str], str]:
    """``sent_id ||| target tokens ||| alignment links``."""
    fields = [field.strip() for field in line.split("|||")]
    if len(fields) < 3 or not fields[0]:
        raise ParseError("expected 'sent_id ||| target ||| alignment'", path, line_no)
    return fields[0], fields[1].split(), fields[2]


def cmd_score(run: RunConfig, args: argparse.Namespace) -> int:
    _require(run, "source", "nbest")
    model = _load_model(run)
    sources = read_sentences(run.source)
    with open(run.nbest, encoding="utf-8") as handle:
        lines = handle.read().splitlines()

    rows = []
    per_sentence: Dict[str, int] = {}
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        sent_id, tokens, links = parse_nbest_line(line, run.nbest, line_no)
        index = per_sentence.get(sent_id, 0)
        per_sentence[sent_id] = index + 1
        try:
            if not sent_id.isdigit() or int(sent_id) >= len(sources):
                raise ArgumentError(f"sentence id {sent_id!r} has no source line")
            source = sources[int(sent_id)]
            align = parse_alignment_line(links, len(source), len(tokens), run.nbest, line_no)
        except NeuralOsmError as exc:
            logger.warning("n-best line %d skipped: %s", line_no, exc)
            rows.append(candidate_row(sent_id, index, from_exception(exc)))
            continue
        target = [model.target_vocab.lookup(w) for w in tokens]
        [result] = score_nbest(model, source, [(target, align)])
        rows.append(candidate_row(sent_id, index, result))

    _report(run, "scores", ["sent_id", "candidate", "log_align", "log_word", "error"], rows)
    return EXIT_OK


def cmd_neighbors(run: RunConfig, args: argparse.Namespace) -> int:
    model = _load_model(run)
    index = NeighbourIndex.from_model(model)
    rows = []
    for word in _query_words(run, args.words):
        try:
            neighbours = word_neighbors(model, word, run.neighbours, index)
        except NotRepresentableError:
            neighbours = None
        rows.append(neighbour_row(word, neighbours))
    _report(run, "neighbors", ["word", "neighbours"], rows)
    return EXIT_OK


def _word_report(run: RunConfig, name: str, metrics: List[str], scores: List[WordScore], report) -> None:
    header = ["word", "count", "band"] + metrics + ["neighbours"]
    write_tsv(_out_dir(run) / f"{name}.tsv", header, [word_score_row(s, metrics) for s in scores])
    print(report.title)
    _report(run, f"{name}_bands", ["band", "words"] + metrics, band_rows(report))
    for note in report.notes:
        print(f"# {note}")


def cmd_synonyms(run: RunConfig, args: argparse.Namespace) -> int:
    _require(run, "source", "target", "alignments")
    model = _load_model(run)
    table = estimate_translation_table(load_linked_bitext(run.source, run.target, run.alignments))
    scores, report = semantic_evaluation(
        model, _query_words(run), table, k=run.neighbours, top=run.synonyms, floor=run.synonym_floor
    )
    _word_report(run, "synonyms", ["accuracy"], scores, report)
    hits = [s.values["accuracy"] for s in scores if s.values["accuracy"] is not None]
    overall = sum(hits) / len(hits) if hits else None
    print(f"overall multi-label accuracy: {format_value(overall)}")
    return EXIT_OK


def cmd_morphsim(run: RunConfig, args: argparse.Namespace) -> int:
    _require(run, "tag_lexicon")
    model = _load_model(run)
    scores, report = morphology_evaluation(model, _query_words(run), load_tag_lexicon(run.tag_lexicon), k=run.neighbours)
    _word_report(run, "morphsim", ["tag", "lemma"], scores, report)
    return EXIT_OK


def cmd_gradcheck(run: RunConfig, args: argparse.Namespace) -> int:
    if run.archive:
        model = _load_model(run)
        _require(run, "source", "target", "alignments")
        pairs = load_parallel_corpus(run.source, run.target, run.alignments, model.target_vocab)
        data = _examples(pairs)
    else:
        model, data = build_model(run)
    data = data[: args.sentences]
    if not data:
        raise ArgumentError("gradient check needs at least one sentence pair")

    def loss_fn() -> nk.Tensor:
        return nk.add_n([model.sentence_loss(pair, ops) for pair, ops in data])

    worst = nk.grad_check(
        loss_fn,
        model.parameters(),
        step=GRADCHECK_STEP,
        tolerance=GRADCHECK_TOLERANCE,
        max_entries=run.max_entries,
        rng=nk.Rng(model.seed),
        roundoff_floor=True,
    )
    passed = worst <= GRADCHECK_TOLERANCE
    rows = [[model.config.encoder.kind.value, str(len(data)), f"{worst:.3e}", f"{GRADCHECK_TOLERANCE:.0e}", "pass" if passed else "FAIL"]]
    _report(run, "gradcheck", ["encoder", "sentences", "max_rel_error", "tolerance", "result"], rows)
    return EXIT_OK if passed else EXIT_NUMERIC


def cmd_stats(run: RunConfig, args: argparse.Namespace) -> int:
    _require(run, "source", "test_source")
    train_sentences = read_sentences(run.source)
    train_vocab = build_vocab((w for s in train_sentences for w in s), run.threshold)
    test_tokens = [w for s in read_sentences(run.test_source) for w in s]
    rows = [
        stats_rows("train", corpus_statistics(train_vocab, (w for s in train_sentences for w in s))),
        stats_rows("test", corpus_statistics(train_vocab, test_tokens)),
    ]
    _report(run, "stats", ["split", "tokens", "types", "oov_types", "oov_%"], rows)

    oov = sorted({w for w in test_tokens if not train_vocab.is_common(w)})
    if oov:
        lexicon = _build_lexicon(run, train_vocab.lexicon())
        print(f"{lexicon.mode.value} segmentation rebuilds {100 * reconstruction_rate(oov, lexicon):.2f}% of {len(oov)} OOV types")
    return EXIT_OK


def cmd_mcp(run: RunConfig, args: argparse.Namespace) -> int:
    from .mcp_server import mcp

    mcp.run()
    return EXIT_OK


# ============================================================
# Parser
# ============================================================
def _corpus_options(parser: argparse.ArgumentParser, dev: bool = False) -> None:
    group = parser.add_argument_group("corpus")
    group.add_argument("--source", help="source sentences, one per line, whitespace tokenised")
    group.add_argument("--target", help="target sentences, parallel to --source")
    group.add_argument("--alignments", help="Pharaoh i-j alignment file, parallel to --source")
    group.add_argument("--threshold", type=int, help="minimum training count for an own embedding (default 5)")
    group.add_argument("--unit-mode", choices=[m.value for m in UnitMode])
    group.add_argument("--segmentations", help="word<TAB>morphs file for --unit-mode morph")
    if dev:
        group.add_argument("--dev-source")
        group.add_argument("--dev-target")
        group.add_argument("--dev-alignments")


def _model_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("model")
    group.add_argument("--encoder", choices=[k.value for k in EncoderKind])
    group.add_argument("--source-dim", type=int)
    group.add_argument("--target-dim", type=int)
    group.add_argument("--hidden", type=int)
    group.add_argument("--unit-dim", type=int)
    group.add_argument("--lstm-hidden", type=int)
    group.add_argument("--kernel-widths", help="comma separated, e.g. 1,2,3,4,5")
    group.add_argument("--highway-layers", type=int)


def _archive_option(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--archive", help=f"model archive (default <out>/{DEFAULT_ARCHIVE_NAME})")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' run configuration; flags win")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (default ./out)")

    parser = argparse.ArgumentParser(
        prog="neural-osm",
        description="Neural operation sequence model with sub-word source encoders.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("vocab", parents=[common], help="build source and target vocabularies")
    _corpus_options(p)
    p.set_defaults(handler=cmd_vocab)

    p = commands.add_parser("segment", parents=[common], help="segment the source lexicon into units")
    _corpus_options(p)
    p.set_defaults(handler=cmd_segment)

    p = commands.add_parser("ops", parents=[common], help="write operation sequences for a corpus")
    _corpus_options(p)
    p.set_defaults(handler=cmd_ops)

    p = commands.add_parser("train", parents=[common], help="train a model and save its archive")
    _corpus_options(p, dev=True)
    _model_options(p)
    _archive_option(p)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--dev-every", type=int)
    p.set_defaults(handler=cmd_train)

    p = commands.add_parser("ppl", parents=[common], help="word and alignment perplexity")
    _corpus_options(p)
    _archive_option(p)
    p.set_defaults(handler=cmd_ppl)

    p = commands.add_parser("score", parents=[common], help="reranker features for an n-best list")
    _corpus_options(p)
    _archive_option(p)
    p.add_argument("--nbest", help="lines 'sent_id ||| target ||| alignment'")
    p.set_defaults(handler=cmd_score)

    p = commands.add_parser("neighbors", parents=[common], help="nearest neighbours of query words")
    _archive_option(p)
    p.add_argument("words", nargs="*")
    p.add_argument("--queries", help="file with one query word per line")
    p.add_argument("--test-source", help="take query words from this corpus")
    p.add_argument("--neighbours", type=int)
    p.set_defaults(handler=cmd_neighbors)

    p = commands.add_parser("synonyms", parents=[common], help="multi-label accuracy against pivoted synonyms")
    _corpus_options(p)
    _archive_option(p)
    p.add_argument("--queries")
    p.add_argument("--test-source")
    p.add_argument("--neighbours", type=int)
    p.add_argument("--synonyms", type=int)
    p.add_argument("--synonym-floor", type=int)
    p.set_defaults(handler=cmd_synonyms)

    p = commands.add_parser("morphsim", parents=[common], help="tag and lemma similarity of neighbours")
    _archive_option(p)
    p.add_argument("--tag-lexicon", help="word<TAB>lemmas<TAB>bit vectors")
    p.add_argument("--queries")
    p.add_argument("--test-source")
    p.add_argument("--neighbours", type=int)
    p.set_defaults(handler=cmd_morphsim)

    p = commands.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    _corpus_options(p)
    _model_options(p)
    _archive_option(p)
    p.add_argument("--sentences", type=int, default=3, help="sentence pairs in the checked loss")
    p.add_argument("--max-entries", type=int, help="sample at most this many entries per parameter")
    p.set_defaults(handler=cmd_gradcheck)

    p = commands.add_parser("stats", parents=[common], help="token, type and OOV statistics")
    _corpus_options(p)
    p.add_argument("--test-source")
    p.set_defaults(handler=cmd_stats)

    p = commands.add_parser("mcp", parents=[common], help="serve read-only model tools over stdio")
    p.set_defaults(handler=cmd_mcp)

    return parser


_NOT_CONFIG = {"command", "handler", "config", "words", "sentences"}


def load_run_config(args: argparse.Namespace) -> RunConfig:
    file_values = read_config_file(args.config) if args.config else None
    flags = {key: value for key, value in vars(args).items() if key not in _NOT_CONFIG}
    return RunConfig(**merge_config(file_values, flags))


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        run = load_run_config(args)
        return args.handler(run, args)
    except ArithmeticError as exc:
        logger.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (NeuralOsmError, ValidationError, OSError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
