"""Deterministic seed derivation.

All stochastic stages derive their RNG streams by hashing the user seed
together with stable identity parts (trajectory id, step, rollout index).
Draws are therefore independent of dataset ordering and of how work is
scheduled across parallel workers, and stable across runs and platforms
(unlike Python's salted ``hash``).
"""

from __future__ import annotations

import hashlib

import numpy as np


def mix64(*parts: object) -> int:
    """Hash identity parts into a 64-bit integer seed."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big")


def rng_from(*parts: object) -> np.random.Generator:
    """A fresh generator seeded by ``mix64`` of the given parts."""
    return np.random.default_rng(mix64(*parts))
