"""Small numerical helpers shared by the Monte Carlo modules."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

DEFAULT_BATCHES = 32


def batch_means(series: Sequence[float], batches: int = DEFAULT_BATCHES) -> tuple[float, float]:
    """Mean and batch-means standard error of a (possibly correlated) series.

    Uses ``min(batches, n // 2)`` contiguous batches of equal size; the tail
    that does not fill a batch is used in the mean but not in the error.
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least two values")
    mean = float(np.mean(x))
    b = max(2, min(batches, n // 2))
    size = n // b
    bm = x[: b * size].reshape(b, size).mean(axis=1)
    se = float(np.std(bm, ddof=1) / math.sqrt(b))
    return mean, se


def combined_se(*ses: float) -> float:
    return math.sqrt(sum(float(s) ** 2 for s in ses))
