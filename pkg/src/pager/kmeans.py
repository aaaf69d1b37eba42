"""Seeded k-means with k-means++ initialization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


def sq_distances(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances ``(N, K)``, clamped at zero."""
    d = (x * x).sum(1)[:, None] - 2.0 * x @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``k`` seed points chosen by D^2 sampling."""
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    best = sq_distances(x, x[chosen[-1]][None])[:, 0]
    for _ in range(1, k):
        total = best.sum()
        if total > 0:
            nxt = int(np.searchsorted(np.cumsum(best), rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        else:
            # every point coincides with a chosen seed
            nxt = int(rng.integers(n))
        chosen.append(nxt)
        best = np.minimum(best, sq_distances(x, x[nxt][None])[:, 0])
    return np.array(chosen)


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    inertia: float
    inertia_history: list[float]
    n_iter: int


def assign(x: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = sq_distances(x, centers)
    labels = np.argmin(d, axis=1)
    return labels, d[np.arange(len(x)), labels]


def kmeans(x: np.ndarray, k: int, seed: int = 0, max_iter: int = 50, tol: float = 0.0) -> KMeansResult:
    """Lloyd iterations from a k-means++ start.

    ``inertia_history[i]`` is the objective after the assignment step of
    iteration ``i``; it never increases.  Empty clusters keep their center.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if k < 1 or n < k:
        raise InvalidInputError(f"need at least k={k} samples, got {n}")
    rng = np.random.default_rng(seed)
    centers = x[kmeans_plusplus(x, k, rng)].copy()
    history = []
    labels, dist = assign(x, centers)
    history.append(float(dist.sum()))
    it = 0
    for it in range(1, max_iter + 1):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        new_labels, dist = assign(x, centers)
        history.append(float(dist.sum()))
        if np.array_equal(new_labels, labels) or history[-2] - history[-1] <= tol * history[-2]:
            labels = new_labels
            break
        labels = new_labels
    return KMeansResult(centers, labels, history[-1], history, it)
