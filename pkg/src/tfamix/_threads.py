"""Deterministic worker-pool helpers.

Parallel work is partitioned per item (component, start, or grid cell)
with results collected in input order, so numeric output is identical
for any worker count. MTFAD_THREADS caps the pool size. Only the
outermost parallel_map call in a thread fans out; nested calls run
sequentially, which keeps fine-grained numpy work from thrashing the
interpreter lock.
"""

from __future__ import annotations

import os
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

_state = threading.local()


def worker_count() -> int:
    env = os.environ.get("MTFAD_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"MTFAD_THREADS must be an integer, got {env!r}")
    return max(1, min(os.cpu_count() or 1, 8))


def _run_nested(fn: Callable[[T], R], item: T) -> R:
    _state.inside_pool = True
    try:
        return fn(item)
    finally:
        _state.inside_pool = False


def parallel_map(fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
    """Apply ``fn`` to each item; results are returned in input order."""
    workers = min(worker_count(), len(items))
    if workers <= 1 or getattr(_state, "inside_pool", False):
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda item: _run_nested(fn, item), items))
