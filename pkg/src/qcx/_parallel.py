"""Order-preserving thread pool helpers.

Work items never share mutable state, so results depend only on inputs, not
on scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("QCX_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    if threads < 1:
        raise ValueError("thread count must be >= 1")
    return threads


def ordered_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> list[R]:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def first_hit(fn: Callable[[T], R | None], items: Iterable[T], threads: int = 1) -> R | None:
    """First non-None result in item order; later items are skipped once one is found."""
    items = list(items)
    if threads <= 1:
        for x in items:
            r = fn(x)
            if r is not None:
                return r
        return None
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for start in range(0, len(items), threads):
            for r in pool.map(fn, items[start:start + threads]):
                if r is not None:
                    return r
    return None


def chunks(n: int, parts: int) -> list[range]:
    parts = max(1, min(parts, n))
    step = -(-n // parts) if n else 1
    return [range(i, min(i + step, n)) for i in range(0, n, step)]
