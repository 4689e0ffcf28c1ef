"""Splittable seed derivation.

Every random stream in the simulator is keyed by a tuple of integers
(master seed, purpose, index, ...).  Deriving keys by hashing keeps streams
independent of the order in which they are requested, so adding a probe or
reordering trials never perturbs protocol randomness.
"""

from __future__ import annotations

import hashlib
import random
import struct

import numpy as np

_MASK64 = (1 << 64) - 1
_TWO_NEG_53 = 1.0 / (1 << 53)

# Purpose tags keep streams for different roles disjoint.
NODE = 1
TRIAL = 2
PORTS = 3
GRAPH = 4
ORACLE = 5


def derive_seed(*parts: int) -> int:
    """Return a 64-bit key derived from ``parts``."""
    data = struct.pack(f"<{len(parts)}Q", *(p & _MASK64 for p in parts))
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


class NodeRandom:
    """Per-node private coin.

    The first ``random()`` call is answered directly from the derivation hash;
    a full ``random.Random`` is only seeded when a node needs more draws.  Most
    nodes in the election protocols flip exactly one coin, so this keeps
    seeding cost off the hot path.
    """

    __slots__ = ("_key", "_first", "_gen")

    def __init__(self, key: int):
        self._key = key
        self._first = True
        self._gen = None

    def _rng(self) -> random.Random:
        if self._gen is None:
            self._gen = random.Random(self._key)
            self._first = False
        return self._gen

    def random(self) -> float:
        if self._first:
            self._first = False
            return (self._key >> 11) * _TWO_NEG_53
        return self._rng().random()

    def randrange(self, start: int, stop: int | None = None) -> int:
        return self._rng().randrange(start, stop)

    def sample(self, population, k: int) -> list:
        return self._rng().sample(population, k)

    def choices(self, population, k: int) -> list:
        return self._rng().choices(population, k=k)


_GAMMA = np.uint64(0x9E3779B97F4A7C15)


def node_keys(seed: int, n: int) -> list[int]:
    """64-bit keys for nodes ``0..n-1`` of one run (SplitMix64 stream split)."""
    base = np.uint64(derive_seed(seed, NODE))
    with np.errstate(over="ignore"):
        z = base + _GAMMA * np.arange(1, n + 1, dtype=np.uint64)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z.tolist()
