"""Seeded, named random streams for reproducible runs."""

from __future__ import annotations

import zlib
from typing import Tuple

import numpy as np

MAX_SEED = 2**64 - 1


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


class RandomStreams:
    """
    One master seed, many independent generators.

    Each name maps to its own ``numpy.random.Generator`` so that consuming
    numbers in one stream never shifts another. Usage:

        streams = RandomStreams(7)
        init_rng = streams.stream("init")
        child_seed = streams.child_seed(3, 1, 0)
    """

    def __init__(self, seed: int):
        self._seed = _check_seed(seed)

    @property
    def seed(self) -> int:
        return self._seed

    @staticmethod
    def _key(name: str) -> int:
        return zlib.crc32(name.encode("utf-8"))

    def stream(self, name: str) -> np.random.Generator:
        sequence = np.random.SeedSequence(entropy=self._seed, spawn_key=(self._key(name),))
        return np.random.default_rng(sequence)

    def child_seed(self, *path: int) -> int:
        """Derive a 64-bit seed for a sub-task identified by integer coordinates."""
        spawn_key: Tuple[int, ...] = (self._key("child"),) + tuple(int(p) for p in path)
        sequence = np.random.SeedSequence(entropy=self._seed, spawn_key=spawn_key)
        return int(sequence.generate_state(1, dtype=np.uint64)[0])
