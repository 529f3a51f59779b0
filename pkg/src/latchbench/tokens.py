"""Token estimation and seed derivation shared across the harness."""

from __future__ import annotations

import hashlib
import math

DEFAULT_CHARS_PER_TOKEN = 4


def estimate_tokens(text: str, chars_per_token: int = DEFAULT_CHARS_PER_TOKEN) -> int:
    """Estimate the token count of ``text`` as ``ceil(len(text) / chars_per_token)``.

    Provider tokenizers differ; budgets only need to hold to about 2%, so a
    character heuristic keeps every build backend-agnostic and deterministic.
    """
    if chars_per_token <= 0:
        raise ValueError("chars_per_token must be positive")
    return math.ceil(len(text) / chars_per_token)


def derive_seed(*parts: object) -> int:
    """Derive a stable 64-bit seed from arbitrary key parts.

    Seeds depend on identities (global seed, dialogue id, strategy, ...) and
    never on iteration order, so any work ordering reproduces the same draws.
    """
    key = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


def short_hash(*parts: object, length: int = 8) -> str:
    key = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return hashlib.sha256(key).hexdigest()[:length]
