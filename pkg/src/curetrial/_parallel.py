"""Chunked execution of per-trial work across processes.

Chunk boundaries depend only on the number of trials, never on the worker
count, so reductions over the returned chunks are identical for any
``threads`` value.
"""

from __future__ import annotations

import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import Callable, TypeVar

CHUNK_SIZE = 500

T = TypeVar("T")


def chunk_bounds(n_trials: int, chunk_size: int = CHUNK_SIZE) -> list[tuple[int, int]]:
    return [(lo, min(lo + chunk_size, n_trials)) for lo in range(0, n_trials, chunk_size)]


def _call(func, bounds, kwargs):
    return func(bounds[0], bounds[1], **kwargs)


def map_chunks(func: Callable[..., T], n_trials: int, threads: int = 1, **kwargs) -> list[T]:
    """Run ``func(start, stop, **kwargs)`` over all chunks, in chunk order."""
    if n_trials < 1:
        raise ValueError("number of trials must be at least 1")
    bounds = chunk_bounds(n_trials)
    if threads <= 1 or len(bounds) == 1:
        return [func(lo, hi, **kwargs) for lo, hi in bounds]
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=min(threads, len(bounds)), mp_context=ctx) as pool:
        return list(pool.map(partial(_call, func, kwargs=kwargs), bounds))
