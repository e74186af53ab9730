"""Deterministic chunked map-reduce over the time axis.

Chunk boundaries depend only on the problem size, never on the number of
worker threads, and partial results are combined with a fixed pairwise tree.
Results are therefore bit-identical for any thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

CHUNK_SIZE = 4096

_num_threads: int | None = None


def set_num_threads(n: int | None) -> None:
    """Set the worker count used by :func:`map_reduce` (``None`` = all cores)."""
    global _num_threads
    if n is not None and n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    _num_threads = n


def get_num_threads() -> int:
    if _num_threads is None:
        return os.cpu_count() or 1
    return _num_threads


def tree_sum(parts: Sequence[T]) -> T:
    """Sum ``parts`` with a balanced pairwise tree (order fixed by position)."""
    if len(parts) == 0:
        raise ValueError("nothing to sum")
    level = list(parts)
    while len(level) > 1:
        nxt = [level[i] + level[i + 1] for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def chunk_bounds(n: int, chunk_size: int = CHUNK_SIZE) -> list[tuple[int, int]]:
    return [(lo, min(lo + chunk_size, n)) for lo in range(0, n, chunk_size)]


def map_reduce(fn: Callable[[int, int], T], n: int, chunk_size: int = CHUNK_SIZE) -> T:
    """Evaluate ``fn(lo, hi)`` on fixed chunks of ``range(n)`` and tree-sum."""
    bounds = chunk_bounds(n, chunk_size)
    threads = min(get_num_threads(), len(bounds))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: fn(*b), bounds))
    else:
        parts = [fn(lo, hi) for lo, hi in bounds]
    return tree_sum(parts)


def parallel_map(fn: Callable[..., T], items: Sequence) -> list[T]:
    """Order-preserving map over independent items."""
    threads = min(get_num_threads(), max(len(items), 1))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def as_float_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)
