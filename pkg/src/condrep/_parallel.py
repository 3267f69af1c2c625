"""Chunked Monte Carlo with reproducible per-chunk streams.

Work is split into a fixed number of chunks independent of the thread
count, and chunk ``c`` always draws from ``Philox(SeedSequence(seed).spawn)[c]``,
so results do not depend on ``CONDREP_THREADS``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

T = TypeVar("T")

CHUNK = 1 << 17


def n_threads() -> int:
    raw = os.environ.get("CONDREP_THREADS", "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"CONDREP_THREADS must be an integer, got {raw!r}") from None
        if n < 1:
            raise ValueError("CONDREP_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def philox(seed: int, *key: int) -> np.random.Generator:
    """Generator for stream ``key`` under ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *key])))


def map_chunks(fn: Callable[[int, int], T], sizes: list[int]) -> list[T]:
    """``[fn(c, sizes[c]) for c]``, threaded up to ``n_threads()``."""
    threads = min(n_threads(), len(sizes)) or 1
    if threads == 1:
        return [fn(c, k) for c, k in enumerate(sizes)]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(lambda ck: fn(*ck), enumerate(sizes)))


def chunked(n: int, seed: int, fn: Callable[[np.random.Generator, int], T], chunk: int = CHUNK) -> list[T]:
    """Run ``fn(rng, size)`` over chunks summing to ``n``; returns results in chunk order."""
    sizes = [chunk] * (n // chunk) + ([n % chunk] if n % chunk else [])
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    return map_chunks(lambda c, k: fn(np.random.Generator(np.random.Philox(streams[c])), k), sizes)
