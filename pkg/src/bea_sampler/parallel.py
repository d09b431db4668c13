"""Worker-pool helpers. ``BEA_THREADS`` caps the number of workers."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

T = TypeVar("T")


def worker_count() -> int:
    cap = os.environ.get("BEA_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n


def map_chunks(fn: Callable[[np.ndarray], T], rows: np.ndarray) -> list[T]:
    """Apply ``fn`` to contiguous row chunks of ``rows``; results keep row order."""
    workers = min(worker_count(), len(rows))
    if workers <= 1:
        return [fn(rows)]
    chunks = np.array_split(rows, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, chunks))
