"""
Source-word representations.

Each word gets an atomic embedding m_w (rare words share the UNK row) and,
for the sub-word encoders, a composed encoding e_w built from its units.
The representation fed to the translation model is r_w = max(m_w, e_w),
elementwise; the word-only encoder uses r_w = m_w.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import numkit as nk
from .corpus import SegmentationLexicon, Vocabulary
from .domain import EncoderKind
from .errors import ArgumentError, ContractError
from .numkit import LstmParams, ParameterStore, Tensor
from .schemas import EncoderConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WordRepresentation:
    vector: Tensor
    used_unk_row: bool
    used_fallback: bool


@dataclass(frozen=True)
class HighwayLayer:
    transform_weight: Tensor
    transform_bias: Tensor
    gate_weight: Tensor
    gate_bias: Tensor


@dataclass(frozen=True)
class ConvKernel:
    width: int
    weight: Tensor  # [filters × E_u × width]
    bias: Tensor  # [filters]


class WordEmbeddingTable:
    """m_w for the common source words plus the shared UNK row."""

    def __init__(self, store: ParameterStore, vocab: Vocabulary, dim: int) -> None:
        self.vocab = vocab
        self.weight = store.create("enc.word_embed", (vocab.size, dim))

    def lookup(self, token: str) -> Tuple[Tensor, bool]:
        index = self.vocab.lookup(token)
        return nk.row(self.weight, index), index == self.vocab.unk_id


class UnitEmbeddingTable:
    """M ∈ R^{E_u × |U|}; column 0 is the learned padding unit."""

    def __init__(self, store: ParameterStore, lexicon: SegmentationLexicon, dim: int) -> None:
        self.lexicon = lexicon
        self.weight = store.create("enc.unit_embed", (dim, lexicon.size))

    def vectors(self, unit_ids: Sequence[int]) -> List[Tensor]:
        return [nk.column(self.weight, uid) for uid in unit_ids]

    def matrix(self, unit_ids: Sequence[int]) -> Tensor:
        return nk.columns(self.weight, unit_ids)


def combine(atomic: Tensor, composed: Tensor) -> Tensor:
    """Max-combine of the word embedding and its sub-word encoding."""
    return nk.maximum(atomic, composed)


def highway(x: Tensor, layer: HighwayLayer) -> Tensor:
    """t⊙tanh(W_h x + b_h) + (1−t)⊙x with t = σ(W_t x + b_t)."""
    gate = nk.sigmoid(nk.affine(x, layer.gate_weight, layer.gate_bias))
    transformed = nk.tanh(nk.affine(x, layer.transform_weight, layer.transform_bias))
    return nk.add(nk.mul(gate, transformed), nk.mul(nk.one_minus(gate), x))


class SourceEncoder:
    """Owns the encoder parameters and builds r_w for source tokens."""

    def __init__(
        self,
        config: EncoderConfig,
        store: ParameterStore,
        vocab: Vocabulary,
        lexicon: Optional[SegmentationLexicon] = None,
    ) -> None:
        self.config = config
        self.vocab = vocab
        self.lexicon = lexicon
        self.words = WordEmbeddingTable(store, vocab, config.source_dim)
        self.units: Optional[UnitEmbeddingTable] = None
        self.kernels: List[ConvKernel] = []
        self.highways: List[HighwayLayer] = []

        if not config.uses_units:
            return
        if lexicon is None:
            raise ContractError(f"{config.kind.value} encoder needs a segmentation lexicon")
        self.units = UnitEmbeddingTable(store, lexicon, config.unit_dim)

        if config.kind == EncoderKind.BILSTM:
            h, e = config.lstm_hidden, config.unit_dim
            self.forward_lstm = LstmParams(
                store.create("enc.lstm_fwd.W", (4 * h, e + h)),
                store.create("enc.lstm_fwd.b", (4 * h,), init="zeros"),
            )
            self.backward_lstm = LstmParams(
                store.create("enc.lstm_bwd.W", (4 * h, e + h)),
                store.create("enc.lstm_bwd.b", (4 * h,), init="zeros"),
            )
            self.out_weight = store.create("enc.lstm_out.W", (config.source_dim, 2 * h))
            self.out_bias = store.create("enc.lstm_out.b", (config.source_dim,), init="zeros")

        elif config.kind == EncoderKind.CNN:
            for width, filters in zip(config.kernel_widths, config.kernel_filters):
                self.kernels.append(
                    ConvKernel(
                        width,
                        store.create(f"enc.cnn.k{width}.Q", (filters, config.unit_dim, width)),
                        store.create(f"enc.cnn.k{width}.b", (filters,), init="zeros"),
                    )
                )
            dim = config.source_dim
            for layer in range(config.highway_layers):
                self.highways.append(
                    HighwayLayer(
                        store.create(f"enc.highway{layer}.W_h", (dim, dim)),
                        store.create(f"enc.highway{layer}.b_h", (dim,), init="zeros"),
                        store.create(f"enc.highway{layer}.W_t", (dim, dim)),
                        store.create(f"enc.highway{layer}.b_t", (dim,), init="zeros"),
                    )
                )

    @property
    def kind(self) -> EncoderKind:
        return self.config.kind

    # -------- sub-word encoders --------

    def encode_bag(self, unit_ids: Sequence[int]) -> Tensor:
        if not unit_ids:
            raise ArgumentError("bag encoder needs at least one unit")
        return nk.add_n(self.units.vectors(unit_ids))

    def encode_bilstm(self, unit_ids: Sequence[int]) -> Tensor:
        if not unit_ids:
            raise ArgumentError("bi-LSTM encoder needs at least one unit")
        inputs = self.units.vectors(unit_ids)
        zeros = nk.constant(np.zeros(self.config.lstm_hidden))
        h_fwd, c_fwd = zeros, zeros
        for x in inputs:
            h_fwd, c_fwd = nk.lstm_step(h_fwd, c_fwd, x, self.forward_lstm)
        h_bwd, c_bwd = zeros, zeros
        for x in reversed(inputs):
            h_bwd, c_bwd = nk.lstm_step(h_bwd, c_bwd, x, self.backward_lstm)
        return nk.mlp_tanh([h_fwd, h_bwd], self.out_weight, self.out_bias)

    def encode_cnn(self, unit_ids: Sequence[int]) -> Tensor:
        if not unit_ids:
            raise ArgumentError("convolutional encoder needs at least one unit")
        ids = list(unit_ids)
        missing = max(k.width for k in self.kernels) - len(ids)
        if missing > 0:
            left = missing // 2
            pad = SegmentationLexicon.pad_id
            ids = [pad] * left + ids + [pad] * (missing - left)
        matrix = self.units.matrix(ids)
        pooled = [nk.max_over_columns(nk.conv_feature_map(matrix, k.weight, k.bias)) for k in self.kernels]
        encoded = nk.concat(pooled)
        for layer in self.highways:
            encoded = highway(encoded, layer)
        return encoded

    def encode_units(self, unit_ids: Sequence[int]) -> Tensor:
        if self.kind == EncoderKind.BAG:
            return self.encode_bag(unit_ids)
        if self.kind == EncoderKind.BILSTM:
            return self.encode_bilstm(unit_ids)
        if self.kind == EncoderKind.CNN:
            return self.encode_cnn(unit_ids)
        raise ContractError("the word encoder has no sub-word units")

    # -------- word and sentence representations --------

    def represent_word(self, token: str) -> WordRepresentation:
        atomic, used_unk = self.words.lookup(token)
        if not self.config.uses_units:
            return WordRepresentation(atomic, used_unk, False)
        segmentation = self.lexicon.segment(token)
        composed = self.encode_units(segmentation.unit_ids)
        return WordRepresentation(combine(atomic, composed), used_unk, segmentation.fallback)

    def represent_source_sentence(self, tokens: Sequence[str], r_null: Tensor, r_finish: Tensor) -> Tensor:
        """R_s: NULL row, one row per source token, FINISH row."""
        cache: Dict[str, Tensor] = {}
        rows = [r_null]
        for token in tokens:
            if token not in cache:
                cache[token] = self.represent_word(token).vector
            rows.append(cache[token])
        rows.append(r_finish)
        return nk.stack(rows)

    def representation_matrix(self, tokens: Sequence[str]) -> np.ndarray:
        """r_w for many tokens at once, no tape recorded."""
        if not tokens:
            return np.zeros((0, self.config.source_dim))
        with nk.no_grad():
            return np.stack([self.represent_word(t).vector.data for t in tokens])
