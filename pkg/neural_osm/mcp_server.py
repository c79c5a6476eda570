"""
MCP tool server over a trained model archive
--------------------------------------------

Read-only tools:
- model_info: encoder, sizes and vocabularies of the served archive
- score_candidates: the two reranker features for translation candidates
- word_neighbors: nearest source words under the learned representations
- segment: how the model splits a word into sub-word units

The archive path comes from NEURAL_OSM_ARCHIVE and is loaded once.
"""

from __future__ import annotations

import logging
from functools import lru_cache
from typing import Dict, List, Tuple

from fastmcp import FastMCP

from .config import ARCHIVE_PATH
from .converters import MISSING
from .corpus import parse_alignment_line
from .errors import NeuralOsmError, NotRepresentableError
from .evaluation import NeighbourIndex, word_neighbors
from .osm import NeuralOSM, score_nbest
from .repository import ModelRepository
from .responses import error, from_exception, ok

logger = logging.getLogger(__name__)


# ============================================================
# MCP instance
# ============================================================
mcp = FastMCP("neural-osm")


# ============================================================
# Model cache
# ============================================================
@lru_cache(maxsize=4)
def load_served_model(path: str) -> Tuple[NeuralOSM, NeighbourIndex]:
    model, _ = ModelRepository(path).load()
    return model, NeighbourIndex.from_model(model)


def served_model() -> Tuple[NeuralOSM, NeighbourIndex]:
    return load_served_model(ARCHIVE_PATH)


# ============================================================
# Tool bodies (take the model explicitly)
# ============================================================
def describe_model(model: NeuralOSM) -> dict:
    encoder = model.config.encoder
    return ok({
        "encoder": encoder.kind.value,
        "unit_mode": encoder.unit_mode.value if encoder.uses_units else None,
        "source_dim": encoder.source_dim,
        "target_dim": model.config.target_dim,
        "hidden": model.config.hidden,
        "source_vocab": model.source_vocab.size,
        "target_vocab": model.target_vocab.size,
        "source_lexicon": len(model.source_vocab) - 2,
        "parameters": model.store.num_values(),
    }).model_dump()


def candidate_features(model: NeuralOSM, source: str, candidates: List[str]) -> dict:
    """Each candidate is ``target tokens ||| i-j links``."""
    tokens = source.split()
    features: List[Dict] = []
    for index, candidate in enumerate(candidates):
        target_text, sep, links = candidate.partition("|||")
        target_tokens = target_text.split()
        try:
            if not sep:
                raise NeuralOsmError("candidate must be 'target ||| alignment'")
            align = parse_alignment_line(links, len(tokens), len(target_tokens))
        except NeuralOsmError as exc:
            features.append(from_exception(exc).model_dump())
            continue
        target = [model.target_vocab.lookup(w) for w in target_tokens]
        [result] = score_nbest(model, tokens, [(target, align)])
        if result.success:
            result.data["candidate"] = index
        features.append(result.model_dump())
    return ok({"candidates": features}).model_dump()


def neighbours_of(model: NeuralOSM, index: NeighbourIndex, word: str, k: int) -> dict:
    try:
        neighbours = word_neighbors(model, word, k, index)
    except NotRepresentableError:
        return ok({"word": word, "neighbours": MISSING}).model_dump()
    except NeuralOsmError as exc:
        return from_exception(exc).model_dump()
    return ok({"word": word, "neighbours": [n.model_dump() for n in neighbours]}).model_dump()


def segment_with(model: NeuralOSM, word: str) -> dict:
    if model.lexicon is None:
        return error("NO_UNITS", "the word encoder has no sub-word units").model_dump()
    try:
        units, fallback = model.lexicon.split(word)
    except NeuralOsmError as exc:
        return from_exception(exc).model_dump()
    return ok({"word": word, "units": list(units), "fallback": fallback}).model_dump()


def _unavailable(exc: Exception) -> dict:
    logger.error("cannot load %s: %s", ARCHIVE_PATH, exc)
    return error("MODEL_UNAVAILABLE", str(exc)).model_dump()


# ============================================================
# TOOLS
# ============================================================
@mcp.tool
def model_info() -> dict:
    """Describe the served model."""
    try:
        model, _ = served_model()
    except (OSError, NeuralOsmError) as exc:
        return _unavailable(exc)
    return describe_model(model)


@mcp.tool
def score_candidates(source: str, candidates: List[str]) -> dict:
    """log p(alignment) and log p(words) for each 'target ||| i-j links' candidate."""
    try:
        model, _ = served_model()
    except (OSError, NeuralOsmError) as exc:
        return _unavailable(exc)
    return candidate_features(model, source, candidates)


@mcp.tool(name="word_neighbors")
def word_neighbors_tool(word: str, k: int = 20) -> dict:
    """Nearest training words by cosine similarity; "−" if the word has no representation."""
    if k < 1:
        return error("ARGUMENT_ERROR", "k must be positive").model_dump()
    try:
        model, index = served_model()
    except (OSError, NeuralOsmError) as exc:
        return _unavailable(exc)
    return neighbours_of(model, index, word, k)


@mcp.tool
def segment(word: str) -> dict:
    """Sub-word units the model uses for a word."""
    try:
        model, _ = served_model()
    except (OSError, NeuralOsmError) as exc:
        return _unavailable(exc)
    return segment_with(model, word)
