"""Lloyd's k-means with k-means++ seeding.

Used to group per-image descriptors for cluster-wise calibration. Written
against explicit contracts so results are reproducible: seeding and all
randomness come from one derived stream, assignment ties go to the lowest
cluster index, empty clusters keep their previous centroid, and iteration
stops when the relative objective change drops below ``rel_tol`` or after
``max_iter`` rounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .rng import derive_stream


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray   # (k, D) float64
    assignment: np.ndarray  # (n,) int64
    objective: float        # sum of squared distances to assigned centroids
    iterations: int


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _plus_plus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[rng.integers(n)]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # all remaining points coincide with a centroid
            idx = int(rng.integers(n))
        centroids[j] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(axis=1))
    return centroids


def kmeans(points, k: int, seed: int, max_iter: int = 100, rel_tol: float = 1e-6) -> KMeansResult:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1:
        raise UsageError(f"kmeans expects a non-empty (n, D) matrix, got shape {points.shape}")
    n = points.shape[0]
    if not 1 <= k <= n:
        raise UsageError(f"cluster count must satisfy 1 <= k <= {n}, got {k}")
    rng = derive_stream(seed, "kmeans")
    centroids = _plus_plus_init(points, k, rng)
    assignment = np.zeros(n, dtype=np.int64)
    objective = np.inf
    previous = None
    iterations = 0
    for iterations in range(1, max_iter + 1):
        d2 = _squared_distances(points, centroids)
        assignment = d2.argmin(axis=1).astype(np.int64)
        objective = float(d2[np.arange(n), assignment].sum())
        if previous is not None and abs(previous - objective) <= rel_tol * max(previous, 1e-300):
            break
        previous = objective
        for j in range(k):
            members = assignment == j
            if members.any():
                centroids[j] = points[members].mean(axis=0)
    return KMeansResult(centroids, assignment, objective, iterations)


def assign_points(centroids: np.ndarray, points) -> np.ndarray:
    """Nearest-centroid assignment; ties resolve to the lowest index."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return _squared_distances(points, np.asarray(centroids, dtype=np.float64)).argmin(axis=1).astype(np.int64)
