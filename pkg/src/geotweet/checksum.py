"""SHA256 fingerprints for configs, vocabularies and persisted artifacts."""

import hashlib
import json
from pathlib import Path
from typing import Any

CHUNK_SIZE = 65536  # 64 KB read chunks


def sha256_file(path: Path) -> str:
    """Compute SHA256 hex digest of a file.

    Args:
        path: Path to the file.

    Returns:
        Lowercase hex digest string (64 chars).

    Raises:
        FileNotFoundError: If path does not exist.
    """
    h = hashlib.sha256()
    with open(path, "rb") as f:
        while True:
            chunk = f.read(CHUNK_SIZE)
            if not chunk:
                break
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    """SHA256 hex digest of UTF-8 encoded text."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_json(data: Any) -> str:
    """SHA256 of a JSON value in canonical form (sorted keys, no whitespace).

    Two equal configs hash equal regardless of key order in the source file.
    """
    return sha256_text(json.dumps(data, sort_keys=True, separators=(",", ":"), default=str))
