"""Chunked, order-preserving parallel map over point batches.

Chunk boundaries depend only on the batch size, never on the thread count,
so results are bit-identical however many workers run.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

CHUNK = 2048

def _env_threads() -> int:
    return max(1, int(os.environ.get("CONFORMAL_LAB_THREADS", "1") or 1))


_threads = _env_threads()


def set_threads(count: int | None) -> None:
    """Worker count for point batches; ``None`` restores the environment default."""
    global _threads
    _threads = _env_threads() if count is None else max(1, int(count))


def get_threads() -> int:
    return _threads


def map_points(fn: Callable[[np.ndarray], object], points: np.ndarray, chunk: int = CHUNK) -> list:
    """Apply ``fn`` to fixed-size slices of ``points``; results in slice order."""
    pts = np.asarray(points)
    starts = range(0, pts.shape[0], chunk)

    def run(start: int):
        try:
            return fn(pts[start : start + chunk])
        except Exception as err:
            # report point indices relative to the whole batch
            if getattr(err, "point_index", None) is not None:
                err.point_index += start
                err.args = (f"{err.args[0]} [global point {err.point_index}]",) + err.args[1:]
            raise

    if _threads <= 1 or len(starts) <= 1:
        return [run(s) for s in starts]
    with ThreadPoolExecutor(max_workers=_threads) as pool:
        return list(pool.map(run, starts))


def concat(fn: Callable[[np.ndarray], np.ndarray], points: np.ndarray, chunk: int = CHUNK) -> np.ndarray:
    parts = map_points(fn, points, chunk)
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(p) for p in zip(*parts))
    return np.concatenate(parts)


def ordered_sum(values) -> float:
    """Correctly rounded sum: independent of order and chunking."""
    return math.fsum(np.asarray(values, dtype=float).ravel().tolist())
