"""Named, seedable random streams.

Every source of randomness in the package is a PCG64 generator keyed by a
tuple of integers and strings, e.g. ``stream(master_seed, seed_index, "env")``.
Strings are folded into the key through SHA-256, so the mapping from key to
bit stream is stable across platforms and processes. Distinct keys give
independent streams; the same key always reproduces the same draws.
"""

from __future__ import annotations

import hashlib

import numpy as np

StreamKey = tuple[int | str, ...]


def _key_words(part: int | str) -> list[int]:
    if isinstance(part, (int, np.integer)):
        value = int(part)
        if value < 0:
            raise ValueError("stream key integers must be non-negative")
        words = []
        while True:
            words.append(value & 0xFFFFFFFF)
            value >>= 32
            if value == 0:
                return words
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    raise TypeError(f"stream key parts must be int or str, got {type(part)!r}")


def stream(*key: int | str) -> np.random.Generator:
    """Return the generator identified by ``key``."""
    if not key:
        raise ValueError("stream key must not be empty")
    entropy: list[int] = []
    for part in key:
        entropy.extend(_key_words(part))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
