"""Deterministic random streams for trial-parallel experiments.

Every stochastic estimator splits its trials into fixed-size blocks. Block
``b`` of stream ``tag`` draws from

    PCG64(SeedSequence(entropy=seed, spawn_key=(tag, b)))

so the numbers a trial sees depend only on (seed, tag, trial index), never
on how many workers evaluated the blocks. Results are merged in block order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

__all__ = ["BLOCK_SIZE", "block_generator", "block_sizes", "map_blocks", "stream_tag"]

BLOCK_SIZE = 8192

T = TypeVar("T")


def stream_tag(name: str) -> int:
    """Stable 32-bit tag for a named stream (independent of PYTHONHASHSEED)."""
    h = 2166136261
    for byte in name.encode():
        h = ((h ^ byte) * 16777619) & 0xFFFFFFFF
    return h


def block_generator(seed: int, tag: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(tag), int(block)))
    return np.random.Generator(np.random.PCG64(ss))


def block_sizes(n_trials: int, block_size: int = BLOCK_SIZE) -> list[int]:
    full, rest = divmod(int(n_trials), block_size)
    return [block_size] * full + ([rest] if rest else [])


def map_blocks(
    fn: Callable[[np.random.Generator, int], T],
    n_trials: int,
    seed: int,
    tag: int,
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
) -> list[T]:
    """Run ``fn(rng, size)`` once per block; results come back in block order."""
    sizes = block_sizes(n_trials, block_size)

    def job(b: int) -> T:
        return fn(block_generator(seed, tag, b), sizes[b])

    if workers <= 1 or len(sizes) <= 1:
        return [job(b) for b in range(len(sizes))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, range(len(sizes))))


def concat(parts: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate(parts) if parts else np.empty(0)
