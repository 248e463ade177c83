"""Deterministic seed derivation for independent RNG streams."""

from __future__ import annotations

import hashlib
import random


def derive_seed(*parts: object) -> int:
    """Stable 64-bit seed from any printable parts; independent of PYTHONHASHSEED."""
    text = ":".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def stream(*parts: object) -> random.Random:
    return random.Random(derive_seed(*parts))
