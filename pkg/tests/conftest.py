from __future__ import annotations

from pathlib import Path
from typing import Callable, List, Tuple

import pytest

from neural_osm.corpus import AlignedSentencePair, SegmentationLexicon, build_vocab, extract_operations
from neural_osm.domain import EncoderKind
from neural_osm.osm import Example, NeuralOSM
from neural_osm.schemas import EncoderConfig, ModelConfig

TOY_SOURCE = [["a", "b", "c"], ["b", "a"], ["c", "a", "b", "d"]]
TOY_TARGET = [["x", "y", "z"], ["y", "x"], ["z", "x", "y", "w"]]
TOY_ALIGN = [(1, 2, 3), (2, 1), (1, 2, 0, 3)]  # 1-based, 0 = NULL


def tiny_config(kind: EncoderKind) -> ModelConfig:
    return ModelConfig(
        target_dim=3,
        hidden=4,
        encoder=EncoderConfig(
            kind=kind,
            source_dim=4,
            unit_dim=3,
            lstm_hidden=3,
            kernel_widths=[1, 2],
            highway_layers=1,
        ),
    )


def build_toy_model(kind: EncoderKind = EncoderKind.WORD, seed: int = 7, threshold: int = 1) -> Tuple[NeuralOSM, List[Example]]:
    source_vocab = build_vocab((w for s in TOY_SOURCE for w in s), threshold)
    target_vocab = build_vocab((w for s in TOY_TARGET for w in s), threshold)
    lexicon = SegmentationLexicon.for_characters(source_vocab.lexicon()) if kind != EncoderKind.WORD else None
    model = NeuralOSM(tiny_config(kind), source_vocab, target_vocab, lexicon, seed)
    examples = []
    for src, tgt, align in zip(TOY_SOURCE, TOY_TARGET, TOY_ALIGN):
        pair = AlignedSentencePair(tuple(src), tuple(target_vocab.lookup(w) for w in tgt), align)
        examples.append((pair, extract_operations(pair)))
    return model, examples


@pytest.fixture
def toy_model() -> Callable[..., Tuple[NeuralOSM, List[Example]]]:
    """Factory: ``toy_model(kind, seed=7, threshold=1)``."""
    return build_toy_model


@pytest.fixture
def toy_files(tmp_path: Path) -> dict:
    """The toy corpus as source/target/Pharaoh files."""
    source = tmp_path / "train.src"
    target = tmp_path / "train.tgt"
    align = tmp_path / "train.align"
    source.write_text("".join(" ".join(s) + "\n" for s in TOY_SOURCE), encoding="utf-8")
    target.write_text("".join(" ".join(t) + "\n" for t in TOY_TARGET), encoding="utf-8")
    lines = []
    for links in TOY_ALIGN:
        lines.append(" ".join(f"{src - 1}-{tgt}" for tgt, src in enumerate(links) if src > 0))
    align.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return {"source": source, "target": target, "alignments": align, "dir": tmp_path}
