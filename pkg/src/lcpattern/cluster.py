"""DTW K-means over prepared primitives, DBA centers and the elbow sweep.

Samples are ``(l, 6)`` arrays and DTW aligns them in time with a pointwise
Euclidean cost in R^6. Aligning the flattened ``6l`` vectors instead would
let the warp slide between interleaved coordinates, which has no physical
meaning, so the flat form is only used for storage.

The objective ``lambda_w`` is the sum over clusters of squared DTW
distances from members to their center. Every center update is checked
against that objective: if DBA (or another update rule) makes a cluster
worse, the previous center is kept. Together with nearest-center
assignment this makes the objective non-increasing over iterations.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from . import kernels
from .errors import ValidationError

logger = logging.getLogger(__name__)

CENTER_MODES = ("dba", "medoid", "euclidean")


def dtw_distance(a, b) -> float:
    """Full-band DTW with Euclidean local cost; 1-D inputs are treated as one feature."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    return kernels.dtw_distance(a, b)


def _as_samples(primitives) -> np.ndarray:
    arrays = [np.asarray(p, dtype=np.float64) for p in primitives]
    if len({a.shape for a in arrays}) > 1:
        raise ValidationError("primitives must share one (l, d) shape")
    S = np.asarray(arrays)
    if S.ndim == 2:
        S = S[:, :, None]
    if S.ndim != 3:
        raise ValidationError("primitives must share one (l, d) shape")
    return np.ascontiguousarray(S)


def distance_matrix(samples, centers, jobs: int = 1) -> np.ndarray:
    """DTW distance of every sample to every center, shape ``(n, k)``."""
    n, k = len(samples), len(centers)

    def row(i):
        return [kernels.dtw_distance(samples[i], c) for c in centers]

    if jobs > 1 and n > 1:
        # the compiled kernel releases the GIL, so threads run in parallel
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(row, range(n)))
    else:
        rows = [row(i) for i in range(n)]
    return np.asarray(rows, dtype=np.float64).reshape(n, k)


def dba_center(members, init, iters: int = 10) -> np.ndarray:
    """DTW barycenter of ``members`` starting from ``init``.

    Each round aligns every member to the current center and replaces each
    center sample by the mean of the member samples aligned to it. Stops
    after ``iters`` rounds or as soon as the summed squared distance no
    longer decreases (the better of the last two centers is returned).
    """
    M = _as_samples(members)
    if not len(M):
        raise ValidationError("dba_center needs at least one member")
    center = np.array(init, dtype=np.float64)
    if center.ndim == 1:
        center = center[:, None]
    best = sum(kernels.dtw_distance(m, center) ** 2 for m in M)
    for _ in range(iters):
        acc = np.zeros_like(center)
        cnt = np.zeros(len(center))
        for m in M:
            path, _ = kernels.dtw_path(center, m)
            np.add.at(acc, path[:, 0], m[path[:, 1]])
            np.add.at(cnt, path[:, 0], 1.0)
        new = acc / cnt[:, None]
        cost = sum(kernels.dtw_distance(m, new) ** 2 for m in M)
        if not cost < best:
            break
        center, best = new, cost
        if best == 0.0:
            break
    return center


def medoid_center(members) -> np.ndarray:
    """Member with the smallest summed squared DTW distance to the others (lowest index on ties)."""
    M = _as_samples(members)
    D = distance_matrix(M, M)
    return M[int(np.argmin((D ** 2).sum(axis=1)))].copy()


@dataclass
class ClusterModel:
    k: int
    centers: np.ndarray
    labels: np.ndarray
    distances: np.ndarray
    lambda_w: float
    ids: np.ndarray
    history: list[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False

    @property
    def assignments(self) -> dict[int, int]:
        return {int(i): int(c) for i, c in zip(self.ids, self.labels)}

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)


def _seed_pp(S, k, rng, existing=None, jobs=1) -> list[np.ndarray]:
    """k-means++ under DTW; extends ``existing`` centers up to ``k``."""
    centers = [np.array(c) for c in (existing if existing is not None else [])]
    if not centers:
        centers.append(S[int(rng.integers(len(S)))].copy())
    d2 = distance_matrix(S, centers, jobs).min(axis=1) ** 2
    while len(centers) < k:
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(len(S), p=d2 / total))
        else:
            nxt = int(rng.integers(len(S)))
        centers.append(S[nxt].copy())
        d2 = np.minimum(d2, distance_matrix(S, [S[nxt]], jobs)[:, 0] ** 2)
    return centers


def _update(mode, members, old, dba_iters):
    if mode == "dba":
        return dba_center(members, old, dba_iters)
    if mode == "medoid":
        return medoid_center(members)
    return members.mean(axis=0)


def kmeans_dtw(primitives, k: int, seed: int = 0, max_iters: int = 50, *, center: str = "dba",
               init_centers=None, ids: Sequence[int] | None = None, dba_iters: int = 10,
               jobs: int = 1) -> ClusterModel:
    """Partition prepared primitives into ``k`` clusters under DTW.

    Centers start from k-means++ seeding (or from ``init_centers``, topped up
    with k-means++ picks when fewer than ``k`` are given). Assignment is to
    the nearest center by DTW with ties to the lowest index. Iteration stops
    when assignments repeat or after ``max_iters`` rounds.
    """
    if center not in CENTER_MODES:
        raise ValidationError(f"unknown center mode {center!r}")
    S = _as_samples(primitives)
    n = len(S)
    if k < 1:
        raise ValidationError("k must be >= 1")
    if n < k:
        raise ValidationError(f"cannot form {k} clusters from {n} primitives")
    ids = np.arange(n) if ids is None else np.asarray(ids, dtype=np.int64)
    rng = np.random.default_rng(seed)
    centers = np.stack(_seed_pp(S, k, rng, init_centers, jobs))

    labels = None
    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        D = distance_matrix(S, centers, jobs)
        new_labels = D.argmin(axis=1)
        empty = np.setdiff1d(np.arange(k), new_labels)
        if empty.size:
            for j in empty:
                own = D[np.arange(n), new_labels]
                sizes = np.bincount(new_labels, minlength=k)
                movable = sizes[new_labels] > 1
                if not movable.any():
                    break
                far = int(np.flatnonzero(movable)[np.argmax(own[movable])])
                logger.debug("cluster %d empty; reseeded with primitive %d", j, far)
                centers[j] = S[far]
                D[:, j] = distance_matrix(S, [S[far]], jobs)[:, 0]
                new_labels = D.argmin(axis=1)
        d_own = D[np.arange(n), new_labels]
        history.append(float((d_own ** 2).sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels
        for j in range(k):
            members = S[labels == j]
            if not len(members):
                continue
            old_cost = float((d_own[labels == j] ** 2).sum())
            cand = _update(center, members, centers[j], dba_iters)
            cost = float((distance_matrix(members, [cand])[:, 0] ** 2).sum())
            if cost <= old_cost:
                centers[j] = cand
            else:
                logger.debug("cluster %d: update would raise cost %.6g -> %.6g; kept", j, old_cost, cost)

    D = distance_matrix(S, centers, jobs)
    labels = D.argmin(axis=1)
    dist = D[np.arange(n), labels]
    lam = float((dist ** 2).sum())
    if not converged:
        logger.info("kmeans_dtw k=%d stopped at max_iters=%d", k, max_iters)
    return ClusterModel(k, centers, labels, dist, lam, ids, history, it, converged)


def lambda_w(primitives, centers, labels) -> float:
    """Recompute the within-cluster sum of squared DTW distances."""
    S = _as_samples(primitives)
    return float(sum(kernels.dtw_distance(s, centers[c]) ** 2 for s, c in zip(S, labels)))


def smooth_quadratic(k, values) -> np.ndarray:
    """Least-squares quadratic through the defined ``values``, evaluated at every ``k``.

    The degree drops when fewer than three points are defined; with none the
    result is all NaN.
    """
    k = np.asarray(k, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = np.isfinite(v)
    if not ok.any():
        return np.full(len(k), np.nan)
    deg = min(2, int(ok.sum()) - 1)
    coef = np.polynomial.polynomial.polyfit(k[ok], v[ok], deg)
    return np.polynomial.polynomial.polyval(k, coef)


def elbow_curve(primitives, k_range, seed: int = 0, **kw) -> pd.DataFrame:
    """``lambda_w`` over ``k_range`` with change rate and its quadratic smoothing.

    Runs are warm-started: the clustering for each k begins from the previous
    k's centers plus new k-means++ picks, so ``lambda_w`` never increases
    along the sweep. ``change_rate`` compares with the previous k in the
    range and is NaN for the first row.
    """
    S = _as_samples(primitives)
    ks = sorted({int(k) for k in k_range})
    if not ks or ks[0] < 1 or ks[-1] > len(S):
        raise ValidationError(f"k_range must lie within [1, {len(S)}]")
    kw.pop("init_centers", None)
    rows, prev = [], None
    for k in ks:
        model = kmeans_dtw(S, k, seed, init_centers=None if prev is None else prev.centers, **kw)
        rows.append((k, model.lambda_w))
        prev = model
    df = pd.DataFrame(rows, columns=["k", "lambda_w"])
    lam = df["lambda_w"].to_numpy()
    rate = np.full(len(lam), np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        rate[1:] = np.where(lam[:-1] > 0, (lam[:-1] - lam[1:]) / lam[:-1], np.nan)
    df["change_rate"] = rate
    df["smoothed"] = smooth_quadratic(df["k"], rate)
    return df


# --- reports -------------------------------------------------------------------------

def write_cluster_report(model: ClusterModel, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["primitive_id", "cluster", "dtw_to_center"])
        for i, c, d in zip(model.ids, model.labels, model.distances):
            w.writerow([int(i), int(c), repr(float(d))])
    return path


def write_elbow(df: pd.DataFrame, path) -> Path:
    path = Path(path)
    df.to_csv(path, index=False, float_format="%.17g", na_rep="")
    return path


def frequency_table(model: ClusterModel) -> pd.DataFrame:
    sizes = model.sizes()
    total = max(int(sizes.sum()), 1)
    return pd.DataFrame({"cluster": np.arange(model.k), "count": sizes, "share": sizes / total})


def duration_histogram(labels, durations, k: int, bin_width: float = 0.4) -> pd.DataFrame:
    """Per-cluster counts of primitive durations (seconds) in fixed-width bins."""
    labels = np.asarray(labels, dtype=int)
    dur = np.asarray(durations, dtype=float)
    top = (np.floor(dur.max() / bin_width) + 1) * bin_width if len(dur) else bin_width
    edges = np.arange(0.0, top + bin_width / 2, bin_width)
    rows = []
    for c in range(k):
        counts, _ = np.histogram(dur[labels == c], bins=edges)
        rows += [(c, edges[b], edges[b + 1], int(counts[b])) for b in range(len(counts))]
    return pd.DataFrame(rows, columns=["cluster", "bin_lo", "bin_hi", "count"])
