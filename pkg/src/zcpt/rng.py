"""Seed plumbing.

Every stochastic routine takes an explicit integer seed. Sub-seeds are derived
with :func:`hash64` (BLAKE2b over the decimal/str tokens, first 8 bytes,
little-endian), and generators are Philox counter-based bit generators, so no
global RNG state is ever touched.
"""
from __future__ import annotations

import hashlib

import numpy as np


def hash64(*tokens) -> int:
    """Deterministic 64-bit hash of a sequence of ints/strings."""
    h = hashlib.blake2b(digest_size=8)
    for tok in tokens:
        h.update(repr(tok).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def make_rng(seed: int, *tokens) -> np.random.Generator:
    key = hash64(int(seed), *tokens) if tokens else int(seed) % (1 << 64)
    return np.random.Generator(np.random.Philox(key=key))
