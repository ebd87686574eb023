"""Cosine-distance DBSCAN and the dual-radius cluster refinement built on it."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import UNLABELED, _as_matrix, l2_normalize
from .errors import ParameterError, ShapeError

DEFAULT_MIN_PTS = 4


@dataclass(frozen=True)
class ClusterSet:
    """Disjoint clusters of sample indices plus the leftover noise indices."""

    clusters: tuple[np.ndarray, ...]
    noise: np.ndarray
    n_samples: int

    def __post_init__(self):
        clusters = tuple(np.sort(np.asarray(c, dtype=np.int64)) for c in self.clusters)
        noise = np.sort(np.asarray(self.noise, dtype=np.int64))
        object.__setattr__(self, "clusters", clusters)
        object.__setattr__(self, "noise", noise)
        seen = np.concatenate(clusters + (noise,)) if clusters or noise.size else np.empty(0, np.int64)
        if any(c.size == 0 for c in clusters):
            raise ShapeError("clusters must be nonempty")
        if seen.size != self.n_samples or not np.array_equal(np.sort(seen), np.arange(self.n_samples)):
            raise ShapeError("clusters and noise must partition [0, n_samples)")

    def __len__(self) -> int:
        return len(self.clusters)

    def labels(self) -> np.ndarray:
        out = np.full(self.n_samples, UNLABELED, dtype=np.int64)
        for k, members in enumerate(self.clusters):
            out[members] = k
        return out

    @classmethod
    def from_labels(cls, labels) -> "ClusterSet":
        """Group by label value (ascending); -1 becomes noise."""
        labels = np.asarray(labels, dtype=np.int64)
        ids = np.unique(labels[labels >= 0])
        clusters = tuple(np.flatnonzero(labels == c) for c in ids)
        return cls(clusters, np.flatnonzero(labels < 0), labels.shape[0])

    @classmethod
    def empty(cls, n_samples: int = 0) -> "ClusterSet":
        return cls((), np.arange(n_samples), n_samples)


def _neighborhoods(unit: np.ndarray, eps: float, block: int = 2048) -> list[np.ndarray]:
    # row-blocked so memory stays O(block * N)
    out = []
    for start in range(0, unit.shape[0], block):
        sim = np.clip(unit[start : start + block] @ unit.T, -1.0, 1.0)
        dist = 1.0 - sim
        out.extend(np.flatnonzero(row <= eps) for row in dist)
    return out


def dbscan(features, eps: float, min_pts: int = DEFAULT_MIN_PTS) -> ClusterSet:
    """DBSCAN under cosine distance ``1 - cos(a, b)``.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Core points are grown into clusters in ascending index
    order. A border point joins the cluster of the lowest-index core point
    within ``eps`` of it, so the result does not depend on traversal order.
    """
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    if min_pts < 1:
        raise ParameterError(f"min_pts must be >= 1, got {min_pts}")
    x = _as_matrix(features)
    n = x.shape[0]
    if n == 0:
        return ClusterSet.empty()

    neighbors = _neighborhoods(l2_normalize(x), eps)
    is_core = np.array([nb.size >= min_pts for nb in neighbors])
    assigned = np.full(n, UNLABELED, dtype=np.int64)

    n_clusters = 0
    for seed in np.flatnonzero(is_core):
        if assigned[seed] != UNLABELED:
            continue
        assigned[seed] = n_clusters
        queue = deque([seed])
        while queue:
            p = queue.popleft()
            for q in neighbors[p]:
                if is_core[q] and assigned[q] == UNLABELED:
                    assigned[q] = n_clusters
                    queue.append(q)
        n_clusters += 1

    labels = assigned.copy()
    for p in np.flatnonzero(~is_core):
        cores = neighbors[p][is_core[neighbors[p]]]
        if cores.size:
            labels[p] = assigned[cores[0]]

    return ClusterSet(
        tuple(np.flatnonzero(labels == k) for k in range(n_clusters)),
        np.flatnonzero(labels == UNLABELED),
        n,
    )


def cluster_centroids(cs: ClusterSet, features) -> np.ndarray:
    """Mean of each cluster's rows, renormalized to unit length (K x D)."""
    x = _as_matrix(features)
    if x.shape[0] != cs.n_samples:
        raise ShapeError(f"cluster set covers {cs.n_samples} samples, features have {x.shape[0]}")
    if not cs.clusters:
        return np.empty((0, x.shape[1]))
    means = np.stack([x[members].mean(axis=0) for members in cs.clusters])
    return l2_normalize(means)


@dataclass(frozen=True)
class Refinement:
    """Full record of one refinement run.

    ``nearest[k]`` is the fine cluster whose centroid is most similar to
    coarse cluster ``k`` (-1 when the fine clustering is empty), and
    ``source[j]`` is the coarse cluster that refined cluster ``j`` came from.
    """

    clusters: ClusterSet
    labels: np.ndarray
    coarse: ClusterSet
    fine: ClusterSet
    nearest: np.ndarray
    source: np.ndarray


def crmr_refine_detailed(
    features,
    eps1: float,
    eps2: float,
    min_pts: int = DEFAULT_MIN_PTS,
    min_cluster_size: int = 1,
) -> Refinement:
    if not eps1 > eps2 > 0:
        raise ParameterError(f"need eps1 > eps2 > 0, got eps1={eps1}, eps2={eps2}")
    x = _as_matrix(features)
    n = x.shape[0]
    coarse = dbscan(x, eps1, min_pts)
    fine = dbscan(x, eps2, min_pts)

    nearest = np.full(len(coarse), -1, dtype=np.int64)
    if len(coarse) and len(fine):
        sim = cluster_centroids(coarse, x) @ cluster_centroids(fine, x).T
        # argmax returns the first maximum, i.e. the lowest fine index on ties
        nearest = np.argmax(sim, axis=1).astype(np.int64)

    refined, origin = [], []
    for k, members in enumerate(coarse.clusters):
        if nearest[k] < 0:
            continue
        common = np.intersect1d(members, fine.clusters[nearest[k]], assume_unique=True)
        if common.size and common.size >= min_cluster_size:
            refined.append(common)
            origin.append(k)

    kept = np.concatenate(refined) if refined else np.empty(0, np.int64)
    noise = np.setdiff1d(np.arange(n), kept)
    clusters = ClusterSet(tuple(refined), noise, n)
    return Refinement(clusters, clusters.labels(), coarse, fine, nearest, np.asarray(origin, dtype=np.int64))


def crmr_refine(
    features,
    eps1: float,
    eps2: float,
    min_pts: int = DEFAULT_MIN_PTS,
    min_cluster_size: int = 1,
) -> tuple[ClusterSet, np.ndarray]:
    """Keep only samples on which a loose and a tight DBSCAN agree.

    Each cluster found at the larger radius ``eps1`` is intersected with the
    ``eps2`` cluster whose centroid is most cosine-similar to its own.
    Empty intersections (and, optionally, ones smaller than
    ``min_cluster_size``) are dropped; survivors are labeled densely from 0
    and everything else gets -1.
    """
    result = crmr_refine_detailed(features, eps1, eps2, min_pts, min_cluster_size)
    return result.clusters, result.labels
