from __future__ import annotations

from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .domain import (
    DEFAULT_HIDDEN,
    DEFAULT_HIGHWAY_LAYERS,
    DEFAULT_KERNEL_WIDTHS,
    DEFAULT_LEARNING_RATE,
    DEFAULT_LSTM_HIDDEN,
    DEFAULT_MAX_EPOCHS,
    DEFAULT_NEIGHBOURS,
    DEFAULT_PATIENCE,
    DEFAULT_SOURCE_DIM,
    DEFAULT_SYNONYM_FLOOR,
    DEFAULT_SYNONYMS,
    DEFAULT_TARGET_DIM,
    DEFAULT_THRESHOLD,
    DEFAULT_UNIT_DIM,
    EncoderKind,
    UnitMode,
)


def split_filters(widths: List[int], total: int) -> List[int]:
    """Spread ``total`` filters over the widths; the remainder goes to the widest."""
    share, remainder = divmod(total, len(widths))
    counts = [share] * len(widths)
    widest = max(range(len(widths)), key=lambda i: (widths[i], i))
    counts[widest] += remainder
    return counts


# -------- Model configuration --------

class EncoderConfig(BaseModel):
    """Source-word encoder hyperparameters."""

    model_config = ConfigDict(frozen=True)

    kind: EncoderKind = EncoderKind.CNN
    unit_mode: UnitMode = UnitMode.CHAR
    source_dim: int = Field(DEFAULT_SOURCE_DIM, ge=1)
    unit_dim: int = Field(DEFAULT_UNIT_DIM, ge=1)
    lstm_hidden: int = Field(DEFAULT_LSTM_HIDDEN, ge=1)
    kernel_widths: List[int] = Field(default_factory=lambda: list(DEFAULT_KERNEL_WIDTHS))
    kernel_filters: Optional[List[int]] = None
    highway_layers: int = Field(DEFAULT_HIGHWAY_LAYERS, ge=0)

    @field_validator("kernel_widths")
    @classmethod
    def _positive_widths(cls, widths: List[int]) -> List[int]:
        if any(w < 1 for w in widths):
            raise ValueError("kernel widths must be positive")
        return sorted(set(widths))

    @model_validator(mode="after")
    def _dimensions_agree(self) -> "EncoderConfig":
        if self.kind == EncoderKind.BAG and self.unit_dim != self.source_dim:
            # the sum of unit embeddings lives in the combine space
            object.__setattr__(self, "unit_dim", self.source_dim)
        if self.kind == EncoderKind.CNN:
            if not self.kernel_widths:
                raise ValueError("cnn encoder needs at least one kernel width")
            if self.kernel_filters is None:
                if self.source_dim < len(self.kernel_widths):
                    raise ValueError(
                        f"source_dim={self.source_dim} cannot give a filter to each of "
                        f"{len(self.kernel_widths)} kernel widths"
                    )
                object.__setattr__(self, "kernel_filters", split_filters(self.kernel_widths, self.source_dim))
            if len(self.kernel_filters) != len(self.kernel_widths):
                raise ValueError("kernel_filters must list one count per kernel width")
            if any(n < 1 for n in self.kernel_filters):
                raise ValueError("every kernel width needs at least one filter")
            if sum(self.kernel_filters) != self.source_dim:
                raise ValueError(
                    f"total filter count {sum(self.kernel_filters)} must equal source_dim={self.source_dim}"
                )
        return self

    @property
    def uses_units(self) -> bool:
        return self.kind != EncoderKind.WORD


class ModelConfig(BaseModel):
    """Translation-model sizes plus the source encoder."""

    model_config = ConfigDict(frozen=True)

    target_dim: int = Field(DEFAULT_TARGET_DIM, ge=1)
    hidden: int = Field(DEFAULT_HIDDEN, ge=1)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)


class TrainConfig(BaseModel):
    """SGD schedule and the dev-likelihood stopping rule."""

    learning_rate: float = Field(DEFAULT_LEARNING_RATE, ge=0.0)
    max_epochs: int = Field(DEFAULT_MAX_EPOCHS, ge=1)
    seed: int = Field(..., ge=0, lt=2**64)
    dev_every: int = Field(1, ge=1)
    patience: int = Field(DEFAULT_PATIENCE, ge=1)
    progress: bool = False


class RunConfig(BaseModel):
    """Everything one command invocation needs; flags override the config file."""

    model_config = ConfigDict(extra="forbid")

    # corpus files
    source: Optional[str] = None
    target: Optional[str] = None
    alignments: Optional[str] = None
    dev_source: Optional[str] = None
    dev_target: Optional[str] = None
    dev_alignments: Optional[str] = None
    test_source: Optional[str] = None
    segmentations: Optional[str] = None
    tag_lexicon: Optional[str] = None
    nbest: Optional[str] = None
    archive: Optional[str] = None
    queries: Optional[str] = None
    out: str = "out"

    # vocabulary and encoder
    threshold: int = Field(DEFAULT_THRESHOLD, ge=0)
    encoder: EncoderKind = EncoderKind.CNN
    unit_mode: UnitMode = UnitMode.CHAR
    source_dim: int = Field(DEFAULT_SOURCE_DIM, ge=1)
    target_dim: int = Field(DEFAULT_TARGET_DIM, ge=1)
    hidden: int = Field(DEFAULT_HIDDEN, ge=1)
    unit_dim: int = Field(DEFAULT_UNIT_DIM, ge=1)
    lstm_hidden: int = Field(DEFAULT_LSTM_HIDDEN, ge=1)
    kernel_widths: List[int] = Field(default_factory=lambda: list(DEFAULT_KERNEL_WIDTHS))
    highway_layers: int = Field(DEFAULT_HIGHWAY_LAYERS, ge=0)

    # training
    seed: Optional[int] = Field(None, ge=0, lt=2**64)
    learning_rate: float = Field(DEFAULT_LEARNING_RATE, ge=0.0)
    max_epochs: int = Field(DEFAULT_MAX_EPOCHS, ge=1)
    patience: int = Field(DEFAULT_PATIENCE, ge=1)
    dev_every: int = Field(1, ge=1)

    # evaluation
    neighbours: int = Field(DEFAULT_NEIGHBOURS, ge=1)
    synonyms: int = Field(DEFAULT_SYNONYMS, ge=1)
    synonym_floor: int = Field(DEFAULT_SYNONYM_FLOOR, ge=0)
    max_entries: Optional[int] = Field(None, ge=1)

    @field_validator("kernel_widths", mode="before")
    @classmethod
    def _parse_widths(cls, value):
        if isinstance(value, str):
            return [int(part) for part in value.replace(",", " ").split()]
        return value

    def model_settings(self) -> ModelConfig:
        return ModelConfig(
            target_dim=self.target_dim,
            hidden=self.hidden,
            encoder=EncoderConfig(
                kind=self.encoder,
                unit_mode=self.unit_mode,
                source_dim=self.source_dim,
                unit_dim=self.unit_dim,
                lstm_hidden=self.lstm_hidden,
                kernel_widths=self.kernel_widths,
                highway_layers=self.highway_layers,
            ),
        )

    def train_settings(self, progress: bool = False) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            max_epochs=self.max_epochs,
            seed=self.seed,
            dev_every=self.dev_every,
            patience=self.patience,
            progress=progress,
        )


# -------- Scores and reports --------

class SequenceScore(BaseModel):
    """The two log terms of the operation-sequence likelihood."""

    log_align: float
    log_word: float
    align_decisions: int
    word_decisions: int

    @property
    def total(self) -> float:
        return self.log_align + self.log_word


class PerplexityReport(BaseModel):
    word_ppl: float
    align_ppl: float
    word_tokens: int
    align_tokens: int


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    dev_log_likelihood: Optional[float] = None
    dev_word_ppl: Optional[float] = None
    dev_align_ppl: Optional[float] = None
    learning_rate: float
    improved: bool = False


class TrainLog(BaseModel):
    epochs: List[EpochRecord] = Field(default_factory=list)
    best_epoch: int = 0
    best_dev_log_likelihood: Optional[float] = None
    stop_reason: str = ""


class CandidateFeatures(BaseModel):
    """Reranker features for one n-best candidate."""

    sent_id: str
    candidate: int
    log_align: float
    log_word: float


class Neighbour(BaseModel):
    word: str
    similarity: float


class WordScore(BaseModel):
    """Per-query-word outcome of an intrinsic evaluation; ``None`` = not representable."""

    word: str
    count: int
    band: str
    values: Dict[str, Optional[float]]
    neighbours: List[str] = Field(default_factory=list)


class BandRow(BaseModel):
    band: str
    words: int
    values: Dict[str, Optional[float]]


class BandReport(BaseModel):
    """Mean metric per frequency band; ``None`` renders as "−"."""

    title: str
    metrics: List[str]
    rows: List[BandRow] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)


class CorpusStats(BaseModel):
    tokens: int
    types: int
    oov_types: int
    oov_rate: float


class Result(BaseModel):
    """Standard result wrapper for isolated items and tool responses."""

    success: bool
    data: Optional[dict] = None
    error_code: Optional[str] = None
    error_message: Optional[str] = None
