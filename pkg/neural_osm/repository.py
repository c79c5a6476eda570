from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import numpy as np

from .corpus import SegmentationLexicon, Vocabulary
from .domain import ARCHIVE_MAGIC, ARCHIVE_VERSION, UnitMode
from .errors import ArchiveVersionError, ContractError, ParseError
from .osm import NeuralOSM
from .schemas import ModelConfig, RunConfig

logger = logging.getLogger(__name__)


def _format_values(values: np.ndarray) -> str:
    return " ".join(format(float(v), ".17g") for v in values.reshape(-1))


class _LineReader:
    """Line cursor that knows where it is, for error messages."""

    def __init__(self, path: Path) -> None:
        self.path = path
        with open(path, encoding="utf-8") as handle:
            self._lines = handle.read().split("\n")
        self.line_no = 0

    def next(self) -> str:
        if self.line_no >= len(self._lines):
            raise self.error("unexpected end of archive")
        line = self._lines[self.line_no]
        self.line_no += 1
        return line

    def fields(self, keyword: str, count: Optional[int] = None) -> List[str]:
        parts = self.next().split(" ")
        if parts[0] != keyword or (count is not None and len(parts) != count + 1):
            raise self.error(f"expected a '{keyword}' record")
        return parts[1:]

    def error(self, message: str) -> ParseError:
        return ParseError(message, str(self.path), self.line_no or None)


class ModelRepository:
    """Save and load trained models as ``OSMMODEL 1`` text archives."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)

    # -------- save --------

    def save(self, model: NeuralOSM, run_config: RunConfig) -> Path:
        lines = [f"{ARCHIVE_MAGIC} {ARCHIVE_VERSION}"]
        lines.append(f"seed {model.seed}")
        lines.append("model " + model.config.model_dump_json())
        lines.append("run " + run_config.model_dump_json())
        lines.extend(self._vocab_lines("source_vocab", model.source_vocab))
        lines.extend(self._vocab_lines("target_vocab", model.target_vocab))
        lines.extend(self._lexicon_lines(model.lexicon))
        params = model.parameters()
        lines.append(f"params {len(params)}")
        for param in params:
            dims = " ".join(str(d) for d in param.data.shape)
            lines.append(f"param {param.name} {param.data.ndim} {dims}")
            lines.append(_format_values(param.data))

        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        logger.info("saved model archive %s (%d parameter arrays)", self.path, len(params))
        return self.path

    @staticmethod
    def _vocab_lines(keyword: str, vocab: Vocabulary) -> Iterator[str]:
        yield f"{keyword} {len(vocab)} {vocab.threshold}"
        for token, count in zip(vocab.tokens, vocab.counts):
            yield f"{token}\t{count}"

    @staticmethod
    def _lexicon_lines(lexicon: Optional[SegmentationLexicon]) -> Iterator[str]:
        if lexicon is None:
            yield "units none 0"
            yield "segments 0"
            return
        yield f"units {lexicon.mode.value} {lexicon.size}"
        yield from lexicon.units
        entries = lexicon.entries
        yield f"segments {len(entries)}"
        for word in sorted(entries):
            yield f"{word}\t{' '.join(entries[word])}"

    # -------- load --------

    def load(self) -> Tuple[NeuralOSM, RunConfig]:
        if not self.path.exists():
            raise FileNotFoundError(f"model archive not found: {self.path}")
        reader = _LineReader(self.path)

        header = reader.next().split(" ")
        if header[0] != ARCHIVE_MAGIC:
            raise ArchiveVersionError(f"{self.path} is not a model archive")
        if len(header) != 2 or header[1] != str(ARCHIVE_VERSION):
            raise ArchiveVersionError(
                f"{self.path}: archive version {' '.join(header[1:])!r}, this build reads {ARCHIVE_VERSION}"
            )

        try:
            seed = int(reader.fields("seed", 1)[0])
            model_config = ModelConfig.model_validate(json.loads(reader.next().removeprefix("model ")))
            run_config = RunConfig.model_validate(json.loads(reader.next().removeprefix("run ")))
        except ParseError:
            raise
        except ValueError as exc:
            raise reader.error(f"bad header record: {exc}") from exc

        source_vocab = self._read_vocab(reader, "source_vocab")
        target_vocab = self._read_vocab(reader, "target_vocab")
        lexicon = self._read_lexicon(reader)

        model = NeuralOSM(model_config, source_vocab, target_vocab, lexicon, seed)
        self._read_params(reader, model)
        logger.info("loaded model archive %s", self.path)
        return model, run_config

    @staticmethod
    def _read_vocab(reader: _LineReader, keyword: str) -> Vocabulary:
        size, threshold = (int(x) for x in reader.fields(keyword, 2))
        tokens: List[str] = []
        counts: List[int] = []
        for _ in range(size):
            token, _, count = reader.next().partition("\t")
            if not count.isdigit():
                raise reader.error("expected 'token<TAB>count'")
            tokens.append(token)
            counts.append(int(count))
        return Vocabulary(tokens, counts, threshold)

    @staticmethod
    def _read_lexicon(reader: _LineReader) -> Optional[SegmentationLexicon]:
        mode, size = reader.fields("units", 2)
        units = [reader.next() for _ in range(int(size))]
        entries = {}
        for _ in range(int(reader.fields("segments", 1)[0])):
            word, _, units_field = reader.next().partition("\t")
            entries[word] = tuple(units_field.split(" "))
        if mode == "none":
            return None
        return SegmentationLexicon(UnitMode(mode), units, entries or None)

    @staticmethod
    def _read_params(reader: _LineReader, model: NeuralOSM) -> None:
        count = int(reader.fields("params", 1)[0])
        if count != len(model.store):
            raise ContractError(f"archive holds {count} parameter arrays, the model has {len(model.store)}")
        for _ in range(count):
            record = reader.fields("param")
            name, ndim = record[0], int(record[1])
            shape = tuple(int(d) for d in record[2 : 2 + ndim])
            if name not in model.store:
                raise ContractError(f"unknown parameter {name!r} in archive")
            param = model.store[name]
            if param.data.shape != shape:
                raise ContractError(f"{name}: archive shape {shape}, model shape {param.data.shape}")
            try:
                values = np.array([float(v) for v in reader.next().split(" ")], dtype=np.float64)
            except ValueError as exc:
                raise reader.error(f"{name}: bad parameter values ({exc})") from exc
            if values.size != param.data.size:
                raise reader.error(f"{name}: expected {param.data.size} values, found {values.size}")
            param.data[...] = values.reshape(shape)
