from .corpus import AlignedSentencePair, Vocabulary, build_vocab, extract_operations, replay_operations
from .osm import NeuralOSM, score_nbest, train
from .repository import ModelRepository

__all__ = [
    "AlignedSentencePair",
    "ModelRepository",
    "NeuralOSM",
    "Vocabulary",
    "build_vocab",
    "extract_operations",
    "replay_operations",
    "score_nbest",
    "train",
]
