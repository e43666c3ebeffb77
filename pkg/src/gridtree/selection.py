"""Selecting historical samples whose phase angles match a query.

Magnitude-only estimation needs samples over which the voltage and current
angles barely move.  Samples are embedded as ``(|v_O[n]|, lam * q_dev[n])`` and
clustered with k-means; the cluster nearest to a query point is used.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridTreeError

log = logging.getLogger(__name__)

MIN_CLUSTER = 50


@dataclass(frozen=True)
class EmbeddedPoint:
    z: np.ndarray
    t: int


@dataclass
class Clustering:
    k: int
    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float
    history: list = field(default_factory=list)  # inertia after each assignment step
    reseeded: list = field(default_factory=list)  # (iteration, cluster) pairs

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == c)

    def nearest(self, z) -> int:
        """Index of the closest centroid; ties go to the lowest index."""
        d = np.sum((self.centroids - np.asarray(z, dtype=float)) ** 2, axis=1)
        return int(np.argmin(d))

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "cluster"])
            for t, c in enumerate(self.assignment):
                w.writerow([t, int(c)])


def auto_lambda(v_mag, q_dev) -> float:
    """Weight giving the voltage block and the scaled q block equal total variance."""
    v_var = float(np.sum(np.var(np.asarray(v_mag, dtype=float), axis=0)))
    q_var = float(np.sum(np.var(np.asarray(q_dev, dtype=float), axis=0)))
    if q_var == 0.0 or v_var == 0.0:
        return 1.0
    return float(np.sqrt(v_var / q_var))


def embed(v_mag, q, lam: float | None = None) -> list[EmbeddedPoint]:
    """Per-sample vectors ``(|v|, lam * (q - mean q))``.

    ``v_mag`` and ``q`` are ``N x |O|``; ``lam=None`` picks :func:`auto_lambda`.
    """
    v_mag = np.asarray(v_mag, dtype=float)
    q = np.asarray(q, dtype=float)
    if v_mag.shape[0] != q.shape[0]:
        raise GridTreeError("voltage and reactive power series differ in length")
    q_dev = q - q.mean(axis=0, keepdims=True)
    if lam is None:
        lam = auto_lambda(v_mag, q_dev)
    if not lam > 0:
        raise GridTreeError("lambda must be positive")
    X = np.hstack([v_mag, lam * q_dev])
    if not np.all(np.isfinite(X)):
        raise GridTreeError("embedding has non-finite entries")
    return [EmbeddedPoint(X[t], t) for t in range(X.shape[0])]


def _as_matrix(points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        return np.atleast_2d(points).astype(float)
    return np.vstack([p.z for p in points]).astype(float)


def _sq_dists(X, C):
    return np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=2)


def _farthest_point_seeds(X, k, rng) -> np.ndarray:
    idx = [int(rng.integers(len(X)))]
    closest = np.sum((X - X[idx[0]]) ** 2, axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(closest))
        idx.append(nxt)
        closest = np.minimum(closest, np.sum((X - X[nxt]) ** 2, axis=1))
    return X[idx].copy()


def kmeans(points, k: int = 3, seed: int = 0, max_iter: int = 100) -> Clustering:
    """Lloyd's k-means with farthest-point seeding.

    A cluster left empty by an update is re-seeded at the sample farthest from
    its assigned centroid.  Deterministic for a given ``seed``.
    """
    X = _as_matrix(points)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise GridTreeError(f"k must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    C = _farthest_point_seeds(X, k, rng)
    history, reseeded = [], []
    assign = None
    for it in range(max_iter):
        D = _sq_dists(X, C)
        new = np.argmin(D, axis=1)
        cost = D[np.arange(n), new]
        for c in range(k):
            if not np.any(new == c):
                far = int(np.argmax(cost))
                new[far] = c
                cost[far] = 0.0
                C[c] = X[far]
                reseeded.append((it, c))
                log.info("k-means: re-seeded empty cluster %d at sample %d", c, far)
        history.append(float(cost.sum()))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for c in range(k):
            C[c] = X[assign == c].mean(axis=0)
    D = _sq_dists(X, C)
    inertia = float(D[np.arange(n), assign].sum())
    return Clustering(k, C, assign, inertia, history, reseeded)


def select_cluster(clustering: Clustering, query, min_size: int | None = None) -> np.ndarray:
    """Sample indices of the cluster nearest to ``query``.

    ``query`` is an :class:`EmbeddedPoint` or a raw vector.  With ``min_size``
    a smaller cluster is rejected.
    """
    z = query.z if isinstance(query, EmbeddedPoint) else query
    c = clustering.nearest(z)
    idx = clustering.members(c)
    if min_size is not None and idx.size < min_size:
        raise GridTreeError(
            f"selected cluster {c} has {idx.size} samples; at least {min_size} required"
        )
    return idx


def min_cluster_size(n_observed: int) -> int:
    return max(MIN_CLUSTER, 2 * n_observed)


def angle_iqr(X, rows=None) -> np.ndarray:
    """Per-column interquartile range of phasor angles (radians)."""
    A = np.angle(np.asarray(X))
    if rows is not None:
        A = A[rows]
    q75, q25 = np.percentile(A, [75, 25], axis=0)
    return q75 - q25
