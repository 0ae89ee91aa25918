"""Euclidean Lloyd K-means with recorded objective trace."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    inertia: float
    trace: list[float]
    n_iter: int


def _sqdist(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def seed_centers(X: np.ndarray, k: int, rng: np.random.Generator, method: str = "++") -> np.ndarray:
    """Pick ``k`` initial centers among the distinct rows of ``X``.

    ``"farthest"``: a random first center, then repeatedly the row farthest
    from all chosen centers. ``"++"``: k-means++ squared-distance sampling.
    """
    uniq = np.unique(X, axis=0)
    if len(uniq) < k:
        raise ValueError(f"need at least {k} distinct points, got {len(uniq)}")
    chosen = [int(rng.integers(len(uniq)))]
    d2 = _sqdist(uniq, uniq[chosen])[:, 0]
    for _ in range(1, k):
        if method == "farthest":
            nxt = int(np.argmax(d2))
        else:
            nxt = int(rng.choice(len(uniq), p=d2 / d2.sum()))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sqdist(uniq, uniq[[nxt]])[:, 0])
    return uniq[chosen].astype(float)


def kmeans(X, k: int, rng: np.random.Generator, *, init: str = "++",
           max_iter: int = 300, tol: float = 1e-6) -> KMeansResult:
    X = np.asarray(X, dtype=float)
    centers = seed_centers(X, k, rng, init)
    trace: list[float] = []
    labels = np.zeros(len(X), dtype=int)
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sqdist(X, centers)
        labels = d2.argmin(axis=1)
        trace.append(float(d2[np.arange(len(X)), labels].sum()))
        new = centers.copy()
        for j in range(k):
            members = X[labels == j]
            if len(members):
                new[j] = members.mean(axis=0)
        shift = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).max())
        centers = new
        if shift < tol:
            break
    d2 = _sqdist(X, centers)
    labels = d2.argmin(axis=1)
    inertia = float(d2[np.arange(len(X)), labels].sum())
    trace.append(inertia)
    return KMeansResult(centers, labels, inertia, trace, it)
