"""Lloyd's k-means with k-means++ seeding."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


@dataclass
class ClusteringResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    aspect_tag: str = ""
    n_iter: int = 0
    inertia_history: list = field(default_factory=list)

    @property
    def k(self):
        return len(self.centroids)


def _sq_dists(x, centroids):
    return ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def kmeans_plusplus(x, k, rng):
    """D²-weighted seeding.  Returns ``(k, d)`` initial centroids."""
    n = len(x)
    idx = [int(rng.integers(n))]
    closest = ((x - x[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            # every point coincides with a chosen centre
            rest = np.setdiff1d(np.arange(n), idx)
            nxt = int(rng.choice(rest))
        idx.append(nxt)
        closest = np.minimum(closest, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[idx].copy()


def _assign(x, centroids):
    d2 = _sq_dists(x, centroids)
    labels = np.argmin(d2, axis=1)  # ties -> lowest centroid index
    return labels, d2[np.arange(len(x)), labels]


def _repair_empty(labels, point_d2, k):
    """Give each empty cluster the point farthest from its own centroid."""
    labels = labels.copy()
    point_d2 = point_d2.copy()
    for j in range(k):
        counts = np.bincount(labels, minlength=k)
        if counts[j]:
            continue
        movable = counts[labels] > 1
        cand = np.where(movable, point_d2, -np.inf)
        i = int(np.argmax(cand))
        labels[i] = j
        point_d2[i] = 0.0
    return labels


def _means(x, labels, k):
    sums = np.zeros((k, x.shape[1]))
    np.add.at(sums, labels, x)
    return sums / np.bincount(labels, minlength=k)[:, None]


def _inertia(x, labels, centroids):
    return float(((x - centroids[labels]) ** 2).sum())


def _lloyd(x, k, rng, max_iters, tol):
    centroids = kmeans_plusplus(x, k, rng)
    history = []
    it = 0
    for it in range(1, max_iters + 1):
        labels, d2 = _assign(x, centroids)
        labels = _repair_empty(labels, d2, k)
        new = _means(x, labels, k)
        history.append(_inertia(x, labels, new))
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        if shift < tol:
            break
    labels, d2 = _assign(x, centroids)
    labels = _repair_empty(labels, d2, k)
    centroids = _means(x, labels, k)
    return labels, centroids, _inertia(x, labels, centroids), it, history


def kmeans(embeddings, k, seed=0, max_iters=300, tol=1e-6, aspect_tag="", n_init=10):
    """Cluster the rows of ``embeddings`` into ``k`` groups.

    Assignment uses squared Euclidean distance with ties going to the lowest
    centroid index.  Iteration stops once no centroid moves by ``tol`` or
    more, or after ``max_iters`` rounds.  ``n_init`` independently seeded
    runs are made and the lowest-inertia one is returned (earliest on ties);
    its ``inertia_history`` holds the objective after every update step and
    is non-increasing.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if not 1 <= k <= n:
        raise InputError(f"kmeans: need 1 <= k <= n, got k={k}, n={n}")
    if not np.isfinite(x).all():
        raise InputError("kmeans: embeddings contain non-finite values")
    if n_init < 1:
        raise InputError(f"kmeans: n_init must be >= 1, got {n_init}")
    best = None
    for run in range(n_init):
        rng = np.random.default_rng([int(seed), run])
        out = _lloyd(x, k, rng, max_iters, tol)
        if best is None or out[2] < best[2]:
            best = out
    labels, centroids, inertia, it, history = best
    return ClusteringResult(labels.astype(np.int64), centroids, inertia,
                            aspect_tag, it, history)
