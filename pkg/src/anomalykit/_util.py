"""Small shared helpers."""

from __future__ import annotations

import hashlib
import json
import re


def stable_hash(text: str) -> int:
    """Process-independent 64-bit hash of a string."""
    return int.from_bytes(hashlib.md5(text.encode("utf-8")).digest()[:8], "big")


def canonical_digest(payload) -> str:
    """sha256 hex digest of a canonical JSON serialization."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def normalize_name(name: str) -> str:
    """Lowercase, trim, collapse internal whitespace and underscores."""
    return re.sub(r"[\s_]+", " ", name.strip().lower())
