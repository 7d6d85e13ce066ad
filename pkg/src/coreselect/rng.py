"""Deterministic named random streams.

Every random decision in the package draws from a stream identified by
``(seed, name)``. Streams with distinct names are statistically independent,
so adding a new consumer never perturbs the draws of existing ones.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_key(name: str) -> int:
    """Stable 64-bit key for a stream name (not Python's salted ``hash``)."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for the given seed and stream name."""
    seq = np.random.SeedSequence(entropy=seed & _MASK64, spawn_key=(stream_key(name),))
    return np.random.default_rng(seq)


def substream_seed(seed: int, name: str) -> int:
    """64-bit integer seed derived from ``(seed, name)``, for APIs taking an int."""
    seq = np.random.SeedSequence(entropy=seed & _MASK64, spawn_key=(stream_key(name),))
    return int(seq.generate_state(1, dtype=np.uint64)[0])
