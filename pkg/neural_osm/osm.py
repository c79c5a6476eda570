"""
Neural operation sequence model with hard attention.

A target sentence is generated as alternating decisions: jump τ_j to a
source position (or NULL), emit target word t_j, and finally jump to
FINISH. The decoder state is

    h_j = tanh(W [h_{j-1}; R_t[t_{j-1}]; R_s[τ_j]] + b)

and the two distributions are

    t_j     ~ softmax(affine(h_j))                     (START masked)
    τ_{j+1} ~ softmax(Φ b^f + R_s W^(sh) h_j + R_s W^(st) R_t[t_j])

The score of a sentence is the sum of the jump log-probabilities and the
word log-probabilities, kept apart because they are separate reranker
features.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from . import numkit as nk
from .corpus import (
    AlignedSentencePair,
    OperationSequence,
    SegmentationLexicon,
    Vocabulary,
    extract_operations,
    replay_operations,
)
from .domain import JUMP_FEATURES, MASKED_LOGIT, JumpClass
from .encoders import SourceEncoder
from .errors import ArgumentError, ContractError, NeuralOsmError, TrainingDivergedError
from .numkit import Parameter, ParameterStore, Rng, Tensor
from .responses import from_exception, ok
from .schemas import EpochRecord, ModelConfig, Result, SequenceScore, TrainConfig, TrainLog

logger = logging.getLogger(__name__)

Example = Tuple[AlignedSentencePair, OperationSequence]


# ============================================================
# Jump features
# ============================================================
def jump_features(i_prev: int, source_length: int) -> np.ndarray:
    """
    Φ for every candidate in {NULL, 1…|s|, FINISH}, one row each.

    Columns: one-hot over [d=0, d=1, d≥2, d≤−1, NULL, FINISH], then d and
    d/|s|, where d = candidate − i_prev and i_prev is the last real source
    position (0 before any). NULL and FINISH rows carry no distance.
    """
    if not 0 <= i_prev <= source_length:
        raise ArgumentError(f"previous position {i_prev} outside 0..{source_length}")
    phi = np.zeros((source_length + 2, JUMP_FEATURES))
    phi[0, JumpClass.NULL] = 1.0
    phi[source_length + 1, JumpClass.FINISH] = 1.0
    numeric = len(JumpClass)
    for candidate in range(1, source_length + 1):
        d = candidate - i_prev
        if d == 0:
            phi[candidate, JumpClass.STAY] = 1.0
        elif d == 1:
            phi[candidate, JumpClass.NEXT] = 1.0
        elif d >= 2:
            phi[candidate, JumpClass.FORWARD] = 1.0
        else:
            phi[candidate, JumpClass.BACKWARD] = 1.0
        phi[candidate, numeric] = d
        phi[candidate, numeric + 1] = d / source_length
    return phi


# ============================================================
# Parameters and state
# ============================================================
@dataclass(frozen=True)
class OsmParams:
    target_embed: Parameter  # R_t  [V_T × E_T]
    state_weight: Parameter  # [H × (H + E_T + E_S)]
    state_bias: Parameter  # [H]
    out_weight: Parameter  # [V_T × H]
    out_bias: Parameter  # [V_T]
    w_sh: Parameter  # [E_S × H]
    w_st: Parameter  # [E_S × E_T]
    b_f: Parameter  # [F]
    h0: Parameter  # [H]
    r_null: Parameter  # [E_S]
    r_finish: Parameter  # [E_S]

    @classmethod
    def create(cls, store: ParameterStore, config: ModelConfig, target_size: int) -> "OsmParams":
        e_s, e_t, h = config.encoder.source_dim, config.target_dim, config.hidden
        return cls(
            target_embed=store.create("osm.target_embed", (target_size, e_t)),
            state_weight=store.create("osm.state.W", (h, h + e_t + e_s)),
            state_bias=store.create("osm.state.b", (h,), init="zeros"),
            out_weight=store.create("osm.out.W", (target_size, h)),
            out_bias=store.create("osm.out.b", (target_size,), init="zeros"),
            w_sh=store.create("osm.W_sh", (e_s, h)),
            w_st=store.create("osm.W_st", (e_s, e_t)),
            b_f=store.create("osm.b_f", (JUMP_FEATURES,), init="zeros"),
            h0=store.create("osm.h0", (h,)),
            r_null=store.create("osm.r_null", (e_s,)),
            r_finish=store.create("osm.r_finish", (e_s,)),
        )


@dataclass(frozen=True)
class DecoderState:
    h: Tensor
    last_word: int
    last_position: int


def perplexity(log_total: float, decisions: int) -> float:
    return math.exp(-log_total / decisions)


# ============================================================
# Model
# ============================================================
class NeuralOSM:
    """Source encoder + operation-sequence decoder sharing one parameter store."""

    def __init__(
        self,
        config: ModelConfig,
        source_vocab: Vocabulary,
        target_vocab: Vocabulary,
        lexicon: Optional[SegmentationLexicon],
        seed: int,
    ) -> None:
        self.config = config
        self.source_vocab = source_vocab
        self.target_vocab = target_vocab
        self.lexicon = lexicon
        self.seed = seed
        self.store = ParameterStore(Rng(seed))
        self.encoder = SourceEncoder(config.encoder, self.store, source_vocab, lexicon)
        self.params = OsmParams.create(self.store, config, target_vocab.size)
        self._word_mask = np.zeros(target_vocab.size)
        self._word_mask[target_vocab.start_id] = MASKED_LOGIT
        logger.info(
            "model: encoder=%s/%s, %d parameter arrays, %d values",
            config.encoder.kind.value,
            config.encoder.unit_mode.value,
            len(self.store),
            self.store.num_values(),
        )

    def parameters(self) -> List[Parameter]:
        return self.store.parameters()

    # -------- building blocks --------

    def encode_source(self, tokens: Sequence[str]) -> Tensor:
        return self.encoder.represent_source_sentence(tokens, self.params.r_null, self.params.r_finish)

    def initial_state(self) -> DecoderState:
        return DecoderState(self.params.h0, self.target_vocab.start_id, 0)

    def state_update(self, state: DecoderState, source_row: Tensor, jump: int, source_length: int) -> DecoderState:
        """Consume the aligned source row; NULL keeps the last real position."""
        previous_word = nk.row(self.params.target_embed, state.last_word)
        h = nk.mlp_tanh([state.h, previous_word, source_row], self.params.state_weight, self.params.state_bias)
        position = jump if 1 <= jump <= source_length else state.last_position
        return DecoderState(h, state.last_word, position)

    def word_log_probs(self, h: Tensor) -> Tensor:
        logits = nk.affine(h, self.params.out_weight, self.params.out_bias)
        return nk.log_softmax(nk.add_constant(logits, self._word_mask))

    def alignment_log_probs(self, h: Tensor, word: int, source_matrix: Tensor, phi: np.ndarray) -> Tensor:
        feature_term = nk.matvec(nk.constant(phi), self.params.b_f)
        state_term = nk.matvec(source_matrix, nk.matvec(self.params.w_sh, h))
        word_vector = nk.row(self.params.target_embed, word)
        word_term = nk.matvec(source_matrix, nk.matvec(self.params.w_st, word_vector))
        return nk.log_softmax(nk.add_n([feature_term, state_term, word_term]))

    def word_distribution(self, h: Tensor) -> np.ndarray:
        with nk.no_grad():
            return np.exp(self.word_log_probs(h).data)

    def alignment_distribution(self, h: Tensor, word: int, source_matrix: Tensor, phi: np.ndarray) -> np.ndarray:
        with nk.no_grad():
            return np.exp(self.alignment_log_probs(h, word, source_matrix, phi).data)

    # -------- sentence likelihood --------

    def _check(self, pair: AlignedSentencePair, ops: OperationSequence) -> None:
        if ops.source_length != len(pair.source):
            raise ContractError(f"operations built for |s|={ops.source_length}, sentence has {len(pair.source)}")
        if replay_operations(ops, len(pair.source)) != (pair.target, pair.align):
            raise ContractError("operation sequence does not match the sentence pair")

    def sentence_terms(self, pair: AlignedSentencePair, ops: OperationSequence) -> Tuple[Tensor, Tensor, int, int]:
        """Gold-path pass returning (Σ log p(τ), Σ log p(t), #jumps, #words)."""
        self._check(pair, ops)
        n = len(pair.source)
        source_matrix = self.encode_source(pair.source)
        state = self.initial_state()
        align_terms: List[Tensor] = []
        word_terms: List[Tensor] = []
        for step in ops.steps:
            phi = jump_features(state.last_position, n)
            log_align = self.alignment_log_probs(state.h, state.last_word, source_matrix, phi)
            align_terms.append(nk.pick(log_align, step.jump))
            if step.word is None:
                break
            state = self.state_update(state, nk.row(source_matrix, step.jump), step.jump, n)
            word_terms.append(nk.pick(self.word_log_probs(state.h), step.word))
            state = replace(state, last_word=step.word)
        log_word = nk.add_n(word_terms) if word_terms else nk.constant(0.0)
        return nk.add_n(align_terms), log_word, len(align_terms), len(word_terms)

    def sentence_loss(self, pair: AlignedSentencePair, ops: OperationSequence) -> Tensor:
        log_align, log_word, _, _ = self.sentence_terms(pair, ops)
        return nk.scale(nk.add(log_align, log_word), -1.0)

    def sequence_score(self, pair: AlignedSentencePair, ops: OperationSequence) -> SequenceScore:
        with nk.no_grad():
            log_align, log_word, n_align, n_word = self.sentence_terms(pair, ops)
        return SequenceScore(
            log_align=log_align.item(),
            log_word=log_word.item(),
            align_decisions=n_align,
            word_decisions=n_word,
        )

    def score_corpus(self, data: Sequence[Example]) -> SequenceScore:
        log_align = log_word = 0.0
        n_align = n_word = 0
        for pair, ops in data:
            score = self.sequence_score(pair, ops)
            log_align += score.log_align
            log_word += score.log_word
            n_align += score.align_decisions
            n_word += score.word_decisions
        return SequenceScore(log_align=log_align, log_word=log_word, align_decisions=n_align, word_decisions=n_word)


# ============================================================
# Training
# ============================================================
class EarlyStopping:
    """Stop once the dev likelihood fails to improve ``patience`` times in a row."""

    def __init__(self, patience: int = 1) -> None:
        if patience < 1:
            raise ArgumentError(f"patience must be at least 1, got {patience}")
        self.patience = patience
        self.best: Optional[float] = None
        self.best_epoch = 0
        self.regressions = 0

    def update(self, epoch: int, dev_log_likelihood: float) -> bool:
        if self.best is None or dev_log_likelihood > self.best:
            self.best = dev_log_likelihood
            self.best_epoch = epoch
            self.regressions = 0
            return True
        self.regressions += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.regressions >= self.patience


def train(
    model: NeuralOSM,
    train_data: Sequence[Example],
    dev_data: Sequence[Example],
    config: TrainConfig,
) -> TrainLog:
    """
    Per-sentence SGD on −(log p(τ) + log p(t)).

    After every ``dev_every`` epochs the dev log-likelihood is measured; the
    first time it fails to improve (and ``patience`` is used up) training
    stops and the best parameters are restored.
    """
    if not train_data or not dev_data:
        raise ArgumentError("training needs non-empty train and dev sets")

    shuffle_rng = Rng((config.seed + 1) % 2**64)
    params = model.parameters()
    stopper = EarlyStopping(config.patience)
    best_snapshot = model.store.snapshot()
    lr = config.learning_rate
    log = TrainLog()

    logger.info(
        "Training started: %d train / %d dev sentences, lr=%g, max_epochs=%d",
        len(train_data),
        len(dev_data),
        lr,
        config.max_epochs,
    )
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_data))
        epoch_loss = 0.0
        for index in tqdm(order, desc=f"epoch {epoch}", disable=not config.progress, leave=False):
            pair, ops = train_data[index]
            loss = model.sentence_loss(pair, ops)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, int(index), value)
            loss.backward()
            nk.sgd_step(params, lr)
            epoch_loss += value

        record = EpochRecord(epoch=epoch, train_loss=epoch_loss, learning_rate=lr)
        if epoch % config.dev_every == 0 or epoch == config.max_epochs:
            dev = model.score_corpus(dev_data)
            if not math.isfinite(dev.total):
                raise TrainingDivergedError(epoch, -1, dev.total)
            improved = stopper.update(epoch, dev.total)
            if improved:
                best_snapshot = model.store.snapshot()
            record.dev_log_likelihood = dev.total
            record.dev_word_ppl = perplexity(dev.log_word, dev.word_decisions) if dev.word_decisions else 1.0
            record.dev_align_ppl = perplexity(dev.log_align, dev.align_decisions)
            record.improved = improved
            logger.info(
                "Epoch [%d]\tTrain-loss=%.6f Dev-LL=%.6f Dev-W-ppl=%.4f Dev-A-ppl=%.4f lr=%g%s",
                epoch,
                epoch_loss,
                dev.total,
                record.dev_word_ppl,
                record.dev_align_ppl,
                lr,
                "" if improved else " (no improvement)",
            )
            log.epochs.append(record)
            if stopper.should_stop:
                log.stop_reason = f"dev likelihood did not improve after epoch {stopper.best_epoch}"
                break
            if not improved:
                lr *= 0.5
        else:
            log.epochs.append(record)
    else:
        log.stop_reason = f"maximum of {config.max_epochs} epochs reached"

    model.store.restore(best_snapshot)
    log.best_epoch = stopper.best_epoch
    log.best_dev_log_likelihood = stopper.best
    logger.info("Training finished: %s. Best epoch: %d", log.stop_reason, log.best_epoch)
    return log


# ============================================================
# Reranker features
# ============================================================
def score_nbest(
    model: NeuralOSM,
    source: Sequence[str],
    candidates: Sequence[Tuple[Sequence[int], Sequence[int]]],
) -> List[Result]:
    """(log_align, log_word) per candidate; a failing candidate does not stop the rest."""
    results: List[Result] = []
    for index, (target, align) in enumerate(candidates):
        try:
            pair = AlignedSentencePair(tuple(source), tuple(target), tuple(align))
            score = model.sequence_score(pair, extract_operations(pair))
        except (NeuralOsmError, ArithmeticError) as exc:
            logger.warning("candidate %d could not be scored: %s", index, exc)
            results.append(from_exception(exc))
            continue
        results.append(ok({"candidate": index, "log_align": score.log_align, "log_word": score.log_word}))
    return results
