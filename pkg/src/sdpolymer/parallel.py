"""Deterministic, order-preserving parallel map over independent replica tasks."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Optional, TypeVar

import numpy as np

WORKERS_ENV = "SDPOLYMER_WORKERS"

T = TypeVar("T")
R = TypeVar("R")


def worker_count(requested: Optional[int] = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None) -> list[R]:
    """Map preserving input order; results do not depend on the worker count."""
    items = list(items)
    n = min(worker_count(workers), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * n))))


def fsum_columns(a: np.ndarray) -> np.ndarray:
    """Exactly rounded column sums, independent of row order."""
    a = np.asarray(a, dtype=float)
    return np.array([math.fsum(col) for col in a.T]) if a.ndim == 2 else np.array(math.fsum(a))


def fmean_columns(a: np.ndarray) -> np.ndarray:
    return fsum_columns(a) / np.asarray(a).shape[0]
