"""Chunked, order-independent Monte Carlo plumbing."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence, TypeVar

import numpy as np

R = TypeVar("R")

# Fixed chunking: the partition of sample indices never depends on the
# number of threads, so per-chunk arithmetic is reproducible.
CHUNK = 512


def default_threads() -> int:
    env = os.environ.get("BANDLOC_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def chunk_ranges(n_samples: int, chunk: int = CHUNK) -> list[range]:
    return [range(i, min(i + chunk, n_samples)) for i in range(0, n_samples, chunk)]


def map_chunks(fn: Callable[[range], R], n_samples: int, threads: int = 1,
               chunk: int = CHUNK) -> list[R]:
    """Apply ``fn`` to each index chunk; results come back in chunk order."""
    ranges = chunk_ranges(n_samples, chunk)
    if threads <= 1 or len(ranges) <= 1:
        return [fn(r) for r in ranges]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, ranges))


@dataclass(frozen=True)
class RunningStats:
    """Count, mean and sum of squared deviations; merges associatively."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, values: Sequence[float]) -> "RunningStats":
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            return cls()
        mu = float(v.mean())
        return cls(int(v.size), mu, float(((v - mu) ** 2).sum()))

    def merge(self, other: "RunningStats") -> "RunningStats":
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        n = self.count + other.count
        d = other.mean - self.mean
        mean = self.mean + d * other.count / n
        m2 = self.m2 + other.m2 + d * d * self.count * other.count / n
        return RunningStats(n, mean, m2)

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def stderr(self) -> float:
        return float(np.sqrt(self.variance / self.count)) if self.count > 1 else 0.0


def merge_all(stats: Sequence[RunningStats]) -> RunningStats:
    out = RunningStats()
    for s in stats:
        out = out.merge(s)
    return out
