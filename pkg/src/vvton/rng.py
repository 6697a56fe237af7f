"""Counter-based random number streams.

Every stochastic choice in the pipeline draws from a Philox generator keyed
by a stable hash of (seed, purpose tags). Streams are stateless functions of
their key, so parallel or re-ordered evaluation cannot change results and any
draw can be replayed in isolation.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key(parts: tuple) -> np.ndarray:
    h = hashlib.blake2b(digest_size=16)
    for part in parts:
        if isinstance(part, float):
            part = part.hex()
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return np.frombuffer(h.digest(), dtype=np.uint64)


def stream(*parts: object) -> np.random.Generator:
    """Independent generator for the given (seed, tag, counter...) key."""
    return np.random.Generator(np.random.Philox(key=_key(parts)))


def stable_hash64(text: str) -> int:
    """Process-independent 64-bit hash of a string (unlike builtin hash)."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")
