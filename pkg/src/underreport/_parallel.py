from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def worker_count() -> int:
    """Worker cap from UNDERREPORT_THREADS, defaulting to the machine's cores."""
    raw = os.environ.get("UNDERREPORT_THREADS")
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise ValueError(f"UNDERREPORT_THREADS must be an integer, got {raw!r}") from None
        return max(1, value)
    return os.cpu_count() or 1


def map_ordered(fn: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> list[R]:
    """Apply ``fn`` to every item, preserving order.

    Every task carries its own seed, so the output does not depend on ``workers``.
    """
    items = list(items)
    workers = worker_count() if workers is None else max(1, workers)
    if workers == 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))
