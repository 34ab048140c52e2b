"""Global worker-count cap and a deterministic parallel map.

Results are always reduced in submission order, so outputs are identical
whatever the thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

_MAX_THREADS = 1


def set_max_threads(n: int):
    global _MAX_THREADS
    _MAX_THREADS = max(1, int(n))


def get_max_threads() -> int:
    return _MAX_THREADS


def ordered_map(fn, items):
    """map() preserving order; threaded only when the global cap allows."""
    items = list(items)
    if _MAX_THREADS <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=_MAX_THREADS) as pool:
        return list(pool.map(fn, items))
