"""
Thread-pool helpers for data-parallel work over sample points.
Results always come back in input order so aggregated reports are deterministic.
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

import numpy as np

from geoequiv.core.config import settings

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Sequence[T], workers: Optional[int] = None) -> List[R]:
    """
    Apply fn to every item using a thread pool, preserving order.

    Args:
        fn: Function applied to each item
        items: Work items
        workers: Thread count, defaults to settings.worker_count

    Returns:
        List of results in the order of items
    """
    workers = workers or settings.worker_count
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def split_rows(array: np.ndarray, parts: Optional[int] = None) -> List[np.ndarray]:
    """Split along the first axis into at most ``parts`` contiguous, non-empty chunks."""
    parts = max(1, min(parts or settings.worker_count, len(array)))
    return [chunk for chunk in np.array_split(array, parts) if len(chunk)]
