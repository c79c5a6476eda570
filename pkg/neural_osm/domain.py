from __future__ import annotations

from enum import Enum


class EncoderKind(str, Enum):
    WORD = "word"
    BAG = "bag"
    BILSTM = "bilstm"
    CNN = "cnn"


class UnitMode(str, Enum):
    CHAR = "char"
    MORPH = "morph"


class JumpClass(int, Enum):
    """Column of the one-hot part of a jump feature row."""

    STAY = 0  # d = 0
    NEXT = 1  # d = 1
    FORWARD = 2  # d >= 2
    BACKWARD = 3  # d <= -1
    NULL = 4
    FINISH = 5


class FrequencyBand(str, Enum):
    B0_4 = "0-4"
    B5_9 = "5-9"
    B10_14 = "10-14"
    B15_19 = "15-19"
    B20_50 = "20-50"
    B50_PLUS = "50+"


# reserved vocabulary symbols (ids 0 and 1 in every vocabulary)
UNK = "<unk>"
START = "<s>"

# reserved sub-word units (ids 0 and 1 in every unit inventory)
PAD_UNIT = "<pad>"
UNK_UNIT = "<unk>"

FINISH_MARKER = "FINISH"

# one-hot jump classes + (d, d/|s|)
JUMP_FEATURES = len(JumpClass) + 2

# masked logits; exp() underflows to exactly 0 in float64
MASKED_LOGIT = -1e30

ARCHIVE_MAGIC = "OSMMODEL"
ARCHIVE_VERSION = 1

DEFAULT_THRESHOLD = 5
DEFAULT_SOURCE_DIM = 64
DEFAULT_TARGET_DIM = 64
DEFAULT_HIDDEN = 128
DEFAULT_UNIT_DIM = 16
DEFAULT_LSTM_HIDDEN = 32
DEFAULT_KERNEL_WIDTHS = (1, 2, 3, 4, 5)
DEFAULT_HIGHWAY_LAYERS = 1

DEFAULT_LEARNING_RATE = 0.1
DEFAULT_MAX_EPOCHS = 500
DEFAULT_PATIENCE = 1

INIT_SCALE = 0.08

DEFAULT_NEIGHBOURS = 20
DEFAULT_SYNONYMS = 5
DEFAULT_SYNONYM_FLOOR = 5

GRADCHECK_STEP = 1e-4
GRADCHECK_TOLERANCE = 1e-3
