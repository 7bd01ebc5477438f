"""Seeding and content-hash helpers shared by every stage.

Every artifact the pipeline writes is content-addressed by a short hash of the
configuration that produced it, and every random draw flows from a named seed
derived here, so re-running a stage with the same config is byte-identical.
"""
from __future__ import annotations

import hashlib
import json
from typing import Any

_SEED_MASK = (1 << 63) - 1


def canonical_json(obj: Any) -> str:
    """Serialize with sorted keys and no whitespace so equal configs hash equal."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj: Any) -> str:
    """Short stable hex digest used to content-address artifacts on disk."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:12]


def derive_seed(*parts: Any) -> int:
    """Stable 63-bit seed derived from an arbitrary mix of ints and strings.

    Uses SHA-256, not Python's salted hash(), so values are identical across
    processes and runs.
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & _SEED_MASK
