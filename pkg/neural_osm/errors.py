from __future__ import annotations

from typing import Optional


class NeuralOsmError(ValueError):
    """Base error. ``code`` is the stable identifier used in results and logs."""

    code = "ERROR"


class ShapeError(NeuralOsmError):
    code = "SHAPE_ERROR"


class ArgumentError(NeuralOsmError):
    code = "ARGUMENT_ERROR"


class ContractError(NeuralOsmError):
    code = "CONTRACT_ERROR"


class EmptyCorpusError(NeuralOsmError):
    code = "EMPTY_CORPUS"


class NotCoveredError(NeuralOsmError):
    code = "NOT_COVERED"


class NotRepresentableError(NeuralOsmError):
    code = "NOT_REPRESENTABLE"


class ArchiveVersionError(NeuralOsmError):
    code = "ARCHIVE_VERSION"


class ParseError(NeuralOsmError):
    code = "PARSE_ERROR"

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None) -> None:
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(f"{where}{message}")


class TrainingDivergedError(ArithmeticError):
    code = "TRAINING_DIVERGED"

    def __init__(self, epoch: int, sentence: int, loss: float) -> None:
        self.epoch = epoch
        self.sentence = sentence
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, sentence {sentence}")
