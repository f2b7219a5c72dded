"""Farthest-point (max-min) subsampling of point clouds."""

from __future__ import annotations

import numpy as np


def maxmin_subsample(points, m: int, seed=0) -> np.ndarray:
    """Indices of ``m`` points chosen greedily to maximise the minimum spacing.

    The first point is drawn with ``seed``; each next point is the one
    farthest from everything chosen so far.  The result covers the cloud
    evenly, which keeps sampling noise from creating spurious short cycles.
    """
    X = np.asarray(points, dtype=float)
    X = X.reshape(len(X), -1)
    n = len(X)
    if not 1 <= m <= n:
        raise ValueError(f"cannot pick {m} of {n} points")
    rng = np.random.default_rng(seed)
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = rng.integers(n)
    dist = np.linalg.norm(X - X[chosen[0]], axis=1)
    for k in range(1, m):
        chosen[k] = int(np.argmax(dist))
        dist = np.minimum(dist, np.linalg.norm(X - X[chosen[k]], axis=1))
    return chosen
