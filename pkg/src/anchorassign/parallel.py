"""Chunked thread fan-out for per-person stages.

Every per-person draw is keyed by person id, so splitting the work into
chunks changes nothing about the results, only about wall time.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def chunked(items, n: int):
    items = list(items)
    size = max(1, -(-len(items) // max(n, 1)))
    return [items[i:i + size] for i in range(0, len(items), size)]


def for_chunks(fn, items, threads: int = 1) -> list:
    """Apply ``fn`` to contiguous chunks of ``items``; results come back in chunk order."""
    if threads <= 1:
        return [fn(list(items))]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, chunked(items, threads)))
