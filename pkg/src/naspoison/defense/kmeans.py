"""Seeded k-means: k-means++ seeding, Lloyd iterations, restarts keep the lowest inertia."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError


@dataclass(frozen=True)
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    history: list = field(default_factory=list)  # inertia after each Lloyd assignment
    restart: int = 0


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(axis=1)[:, None] - 2.0 * x @ c.T + (c * c).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    closest = _sq_dists(x, np.array(centers))[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point already coincides with a center
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx][None, :])[:, 0])
    return np.array(centers, dtype=np.float64)


def _lloyd(x: np.ndarray, centroids: np.ndarray, max_iter: int, tol: float) -> tuple:
    history = []
    assign = None
    for _ in range(max_iter):
        d = _sq_dists(x, centroids)
        new_assign = d.argmin(axis=1)
        history.append(float(d[np.arange(len(x)), new_assign].sum()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(len(centroids)):
            members = assign == j
            if members.any():
                centroids[j] = x[members].mean(axis=0)
            else:
                # empty cluster: reseed from the point farthest from its centroid
                far = int(d[np.arange(len(x)), assign].argmax())
                centroids[j] = x[far]
                assign = assign.copy()
                assign[far] = j
                d[far] = 0.0
        if tol > 0 and len(history) > 1 and history[-2] - history[-1] <= tol * history[-2]:
            break
    d = _sq_dists(x, centroids)
    assign = d.argmin(axis=1)
    inertia = float(d[np.arange(len(x)), assign].sum())
    return assign, centroids, inertia, history


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 100, restarts: int = 4,
           tol: float = 0.0) -> KMeansResult:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if k < 1 or x.shape[0] < k:
        raise ConfigurationError(f"k-means needs 1 <= k <= n, got k={k}, n={x.shape[0]}")
    best = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        init = kmeans_plus_plus(x, k, rng)
        assign, cents, inertia, hist = _lloyd(x, init.copy(), max_iter, tol)
        if best is None or inertia < best.inertia:
            best = KMeansResult(assign, cents, inertia, hist, r)
    return best
