"""Counter-based random streams.

Every Monte Carlo sample gets its own generator, keyed by
``(root seed, experiment key..., sample index)``. Results therefore do not
depend on how samples are scheduled across workers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Streams:
    seed: int
    key: tuple[int, ...] = ()

    def child(self, *key: int) -> "Streams":
        return Streams(self.seed, self.key + tuple(int(k) for k in key))

    def generator(self, index: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key + (int(index),))
        return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
