from __future__ import annotations

import os
from pathlib import Path
from typing import Dict, Mapping, Optional

from .errors import ParseError

LOG_LEVEL = os.getenv("NEURAL_OSM_LOG_LEVEL", "INFO")

ARCHIVE_PATH = os.getenv(
    "NEURAL_OSM_ARCHIVE",
    "model.osm",  # archive served by the tool server
)

SHOW_PROGRESS = os.getenv("NEURAL_OSM_PROGRESS", "1") not in ("0", "false", "no")


def read_config_file(path: str | Path) -> Dict[str, str]:
    """Parse flat ``key = value`` lines. ``#`` starts a comment."""
    values: Dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"expected 'key = value', got {raw.strip()!r}", str(path), line_no)
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if not key:
                raise ParseError("empty key", str(path), line_no)
            if key in values:
                raise ParseError(f"duplicate key {key!r}", str(path), line_no)
            values[key] = value
    return values


def merge_config(file_values: Optional[Mapping[str, str]], flag_values: Mapping[str, object]) -> Dict[str, object]:
    """Flags win over the config file; unset flags (None) fall through."""
    merged: Dict[str, object] = dict(file_values or {})
    for key, value in flag_values.items():
        if value is not None:
            merged[key] = value
    return merged
