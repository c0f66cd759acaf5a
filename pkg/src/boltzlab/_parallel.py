"""Deterministic thread-pool map for embarrassingly parallel sweeps.

Results are returned in input order, so reductions downstream are
independent of thread scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def resolve_threads(threads: int) -> int:
    """0 means auto (capped at 8); otherwise the explicit degree."""
    if threads < 0:
        raise ValueError(f"thread count must be nonnegative, got {threads}")
    if threads == 0:
        return min(os.cpu_count() or 1, 8)
    return threads


def parallel_map(fn, items, threads: int = 0) -> list:
    items = list(items)
    workers = resolve_threads(threads)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
