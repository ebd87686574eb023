"""Cross-modality cluster alignment.

Three steps turn per-modality features into joint visible/infrared pseudo
labels: refine clusters inside each modality, pair visible with infrared
clusters by minimum-cost bipartite matching, then let leftover clusters of
the larger side join their closest matched cluster when the combined
cosine/Jaccard cost is below a threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .clustering import DEFAULT_MIN_PTS, Refinement, crmr_refine_detailed
from .core import (
    UNLABELED,
    CenterMemory,
    EmbeddingSet,
    _as_matrix,
    cosine_similarity_matrix,
    l2_normalize,
    memory_init,
    memory_update,
)
from .errors import CostMatrixError, DegenerateStageError, EmptyMemoryError, ParameterError, ShapeError

DEFAULT_BETA = 0.2
DEFAULT_RHO = 0.3
DEFAULT_K_RECIPROCAL = 3


@dataclass(frozen=True)
class Assignment:
    """Partial bijection between visible (row) and infrared (column) clusters."""

    pairs: np.ndarray  # (K, 2) int, sorted by visible index
    total_cost: float
    unmatched_visible: np.ndarray
    unmatched_infrared: np.ndarray

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        pairs = pairs[np.argsort(pairs[:, 0], kind="stable")]
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "unmatched_visible", np.asarray(self.unmatched_visible, dtype=np.int64))
        object.__setattr__(self, "unmatched_infrared", np.asarray(self.unmatched_infrared, dtype=np.int64))
        if np.unique(pairs[:, 0]).size != len(pairs) or np.unique(pairs[:, 1]).size != len(pairs):
            raise ShapeError("assignment pairs reuse a cluster index")

    def __len__(self) -> int:
        return len(self.pairs)

    def as_dict(self) -> dict[int, int]:
        return {int(v): int(i) for v, i in self.pairs}


def _hungarian_square_or_wide(cost: np.ndarray) -> np.ndarray:
    """Shortest augmenting path with potentials; requires rows <= cols.

    Returns ``col_of_row``. O(n^2 m).
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # owner[j]: row (1-based) matched to column j, 0 = free
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            candidates = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1
            delta = candidates[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    col_of_row = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if owner[j]:
            col_of_row[owner[j] - 1] = j - 1
    return col_of_row


def hungarian(cost) -> Assignment:
    """Minimum-cost matching of size ``min(P, Q)`` for a P x Q cost matrix.

    Every index on the smaller side is matched. ``total_cost`` is the
    correctly rounded sum of the chosen entries.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise CostMatrixError(f"cost matrix must be 2-D, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise CostMatrixError("cost matrix has non-finite entries")
    p, q = c.shape
    if p == 0 or q == 0:
        return Assignment(np.empty((0, 2)), 0.0, np.arange(p), np.arange(q))
    if p <= q:
        cols = _hungarian_square_or_wide(c)
        pairs = np.column_stack([np.arange(p), cols])
    else:
        rows = _hungarian_square_or_wide(c.T)
        pairs = np.column_stack([rows, np.arange(q)])
    total = math.fsum(c[r, k] for r, k in pairs)
    return Assignment(
        pairs,
        total,
        np.setdiff1d(np.arange(p), pairs[:, 0]),
        np.setdiff1d(np.arange(q), pairs[:, 1]),
    )


def inter_modality_match(mem_v: CenterMemory, mem_i: CenterMemory, max_pair_cost: float | None = None) -> Assignment:
    """Pair visible and infrared centers under cost ``1 - cosine``.

    With ``max_pair_cost`` set, matched pairs costing more are dissolved and
    both of their clusters reported as unmatched.
    """
    if len(mem_v) == 0 or len(mem_i) == 0:
        raise EmptyMemoryError("cannot match against an empty memory")
    cost = 1.0 - cosine_similarity_matrix(mem_v.centers, mem_i.centers)
    result = hungarian(cost)
    if max_pair_cost is None:
        return result
    keep = np.array([cost[v, i] <= max_pair_cost for v, i in result.pairs], dtype=bool)
    pairs = result.pairs[keep]
    return Assignment(
        pairs,
        math.fsum(cost[v, i] for v, i in pairs),
        np.setdiff1d(np.arange(len(mem_v)), pairs[:, 0]),
        np.setdiff1d(np.arange(len(mem_i)), pairs[:, 1]),
    )


def k_reciprocal_sets(centers, k: int) -> np.ndarray:
    """Boolean M x M matrix, ``R[a, b]`` true when b is a k-reciprocal neighbor of a.

    The k-NN list of a point is itself plus its k nearest others under
    cosine distance (stable order, so lower indices win ties). b is
    k-reciprocal to a when each appears in the other's list.
    """
    x = _as_matrix(centers, "centers")
    m = x.shape[0]
    if not 1 <= k <= m:
        raise ParameterError(f"k must lie in [1, {m}], got {k}")
    dist = 1.0 - cosine_similarity_matrix(x, x)
    np.fill_diagonal(dist, -np.inf)
    order = np.argsort(dist, axis=1, kind="stable")[:, : min(k + 1, m)]
    knn = np.zeros((m, m), dtype=bool)
    np.put_along_axis(knn, order, True, axis=1)
    return knn & knn.T


def jaccard_from_sets(reciprocal: np.ndarray) -> np.ndarray:
    r = reciprocal.astype(np.int64)
    inter = r @ r.T
    sizes = r.sum(axis=1)
    union = sizes[:, None] + sizes[None, :] - inter
    return 1.0 - inter / union


def k_reciprocal_jaccard(query_idx: int, centers, k: int) -> np.ndarray:
    """Jaccard distance between the k-reciprocal set of ``centers[query_idx]`` and that of every center."""
    reciprocal = k_reciprocal_sets(centers, k)
    if not 0 <= query_idx < reciprocal.shape[0]:
        raise ParameterError(f"query index {query_idx} out of range")
    r = reciprocal.astype(np.int64)
    inter = r @ r[query_idx]
    union = r.sum(axis=1) + r[query_idx].sum() - inter
    return 1.0 - inter / union


@dataclass(frozen=True)
class SupplementaryCost:
    matrix: np.ndarray  # U x M
    beta: float
    k: int


def supplementary_cost(
    mem_um: CenterMemory, mem_m: CenterMemory, beta: float = DEFAULT_BETA, k: int = DEFAULT_K_RECIPROCAL
) -> SupplementaryCost:
    """Cost of attaching each unmatched center to each matched one.

    ``beta * (1 - cos) + (1 - beta) * d_J``, with d_J the Jaccard distance
    between k-reciprocal sets computed over the pool made of the unmatched
    center and all matched centers. ``k`` is clamped to the pool size minus one.
    """
    if len(mem_m) == 0:
        raise EmptyMemoryError("no matched clusters to attach to")
    if not 0.0 <= beta <= 1.0:
        raise ParameterError(f"beta must lie in [0, 1], got {beta}")
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    n_matched = len(mem_m)
    k_eff = min(k, n_matched)
    cos_term = 1.0 - cosine_similarity_matrix(mem_um.centers, mem_m.centers) if len(mem_um) else np.empty((0, n_matched))
    matrix = np.empty((len(mem_um), n_matched))
    for u in range(len(mem_um)):
        pool = np.vstack([mem_um.centers[u], mem_m.centers])
        jac = k_reciprocal_jaccard(0, pool, k_eff)[1:]
        matrix[u] = beta * cos_term[u] + (1.0 - beta) * jac
    return SupplementaryCost(np.maximum(matrix, 0.0), beta, k_eff)


def supplementary_assign(
    mem_um: CenterMemory,
    mem_m: CenterMemory,
    matched_labels,
    beta: float = DEFAULT_BETA,
    k: int = DEFAULT_K_RECIPROCAL,
    rho: float = DEFAULT_RHO,
) -> np.ndarray:
    """Label each unmatched cluster with its cheapest matched cluster's label, or -1 when the cost is >= ``rho``."""
    if rho <= 0:
        raise ParameterError(f"rho must be positive, got {rho}")
    matched_labels = np.asarray(matched_labels, dtype=np.int64)
    if matched_labels.shape != (len(mem_m),):
        raise ShapeError(f"{len(mem_m)} matched clusters but {matched_labels.shape} labels")
    cost = supplementary_cost(mem_um, mem_m, beta, k).matrix
    out = np.full(len(mem_um), UNLABELED, dtype=np.int64)
    if cost.shape[0] == 0:
        return out
    best = np.argmin(cost, axis=1)
    accept = cost[np.arange(len(best)), best] < rho
    out[accept] = matched_labels[best[accept]]
    return out


@dataclass(frozen=True)
class SGMParams:
    eps1_v: float = 0.6
    eps2_v: float = 0.57
    eps1_i: float = 0.6
    eps2_i: float = 0.57
    min_pts: int = DEFAULT_MIN_PTS
    min_cluster_size: int = 1
    alpha: float = 0.5
    beta: float = DEFAULT_BETA
    rho: float = DEFAULT_RHO
    k_reciprocal: int = DEFAULT_K_RECIPROCAL
    max_pair_cost: float | None = None


@dataclass(frozen=True)
class SGMResult:
    labels_v: np.ndarray
    labels_i: np.ndarray
    n_joint: int
    mem_v: CenterMemory
    mem_i: CenterMemory
    assignment: Assignment
    refine_v: Refinement
    refine_i: Refinement
    cluster_joint_v: np.ndarray  # refined visible cluster -> joint label or -1
    cluster_joint_i: np.ndarray
    n_absorbed: int
    memory_policy: str
    extras: dict = field(default_factory=dict)

    def __iter__(self):
        # allows ``labels_v, labels_i, c_t, mem_v, mem_i = sgm_pipeline(...)``
        return iter((self.labels_v, self.labels_i, self.n_joint, self.mem_v, self.mem_i))


def _cluster_memory(unit, labels, n_clusters, alpha, prior: CenterMemory | None):
    fresh = memory_from_labels(unit, labels, n_clusters, alpha)
    if prior is not None and len(prior) == n_clusters and prior.dim == fresh.dim:
        return memory_update(prior, fresh.centers, alpha).normalized(), "ema"
    return fresh.normalized(), "reinit"


def memory_from_labels(unit: np.ndarray, labels: np.ndarray, n_ids: int, alpha: float) -> CenterMemory:
    return memory_init(EmbeddingSet.from_features(unit, labels), n_ids, alpha)


def sgm_pipeline(
    target_v: EmbeddingSet,
    target_i: EmbeddingSet,
    params: SGMParams = SGMParams(),
    prior_v: CenterMemory | None = None,
    prior_i: CenterMemory | None = None,
) -> SGMResult:
    """Produce joint visible/infrared pseudo labels for unlabeled target data.

    ``prior_v``/``prior_i`` are memories from a previous round; when the
    fresh cluster count matches, the freshly initialized memory is blended
    into the prior by EMA instead of replacing it.
    """
    if len(target_v) == 0 or len(target_i) == 0:
        raise DegenerateStageError("both modalities need samples")
    unit_v = l2_normalize(target_v.data)
    unit_i = l2_normalize(target_i.data)

    refine_v = crmr_refine_detailed(unit_v, params.eps1_v, params.eps2_v, params.min_pts, params.min_cluster_size)
    refine_i = crmr_refine_detailed(unit_i, params.eps1_i, params.eps2_i, params.min_pts, params.min_cluster_size)
    n_v, n_i = len(refine_v.clusters), len(refine_i.clusters)
    if n_v == 0 or n_i == 0:
        empty = "visible" if n_v == 0 else "infrared"
        raise DegenerateStageError(f"no reliable {empty} clusters; every sample is noise")

    mem_v0, policy_v = _cluster_memory(unit_v, refine_v.labels, n_v, params.alpha, prior_v)
    mem_i0, policy_i = _cluster_memory(unit_i, refine_i.labels, n_i, params.alpha, prior_i)

    assignment = inter_modality_match(mem_v0, mem_i0, params.max_pair_cost)
    joint_v = np.full(n_v, UNLABELED, dtype=np.int64)
    joint_i = np.full(n_i, UNLABELED, dtype=np.int64)
    joint_v[assignment.pairs[:, 0]] = np.arange(len(assignment))
    joint_i[assignment.pairs[:, 1]] = np.arange(len(assignment))

    n_absorbed = 0
    if len(assignment) and n_v != n_i:
        if n_v > n_i:
            mem, joint, unmatched, matched = mem_v0, joint_v, assignment.unmatched_visible, assignment.pairs[:, 0]
        else:
            mem, joint, unmatched, matched = mem_i0, joint_i, assignment.unmatched_infrared, assignment.pairs[:, 1]
        if unmatched.size:
            extra = supplementary_assign(
                mem.rows(unmatched), mem.rows(matched), joint[matched], params.beta, params.k_reciprocal, params.rho
            )
            joint[unmatched] = extra
            n_absorbed = int(np.sum(extra != UNLABELED))

    def sample_labels(refined_labels, cluster_joint):
        out = np.full(refined_labels.shape, UNLABELED, dtype=np.int64)
        mask = refined_labels >= 0
        out[mask] = cluster_joint[refined_labels[mask]]
        return out

    labels_v = sample_labels(refine_v.labels, joint_v)
    labels_i = sample_labels(refine_i.labels, joint_i)

    # dense re-index over identities present in both modalities
    present = np.intersect1d(labels_v[labels_v >= 0], labels_i[labels_i >= 0])
    remap = np.full(len(assignment) + 1, UNLABELED, dtype=np.int64)
    remap[present] = np.arange(present.size)

    def apply(lbl):
        out = lbl.copy()
        out[lbl >= 0] = remap[lbl[lbl >= 0]]
        return out

    labels_v, labels_i = apply(labels_v), apply(labels_i)
    joint_v, joint_i = apply(joint_v), apply(joint_i)
    n_joint = int(present.size)

    pairs_kept = assignment.pairs[present]
    old_v = mem_v0.centers[pairs_kept[:, 0]] if n_joint else np.empty((0, unit_v.shape[1]))
    old_i = mem_i0.centers[pairs_kept[:, 1]] if n_joint else np.empty((0, unit_i.shape[1]))
    mem_v = _blend(old_v, unit_v, labels_v, n_joint, params.alpha)
    mem_i = _blend(old_i, unit_i, labels_i, n_joint, params.alpha)

    return SGMResult(
        labels_v=labels_v,
        labels_i=labels_i,
        n_joint=n_joint,
        mem_v=mem_v,
        mem_i=mem_i,
        assignment=assignment,
        refine_v=refine_v,
        refine_i=refine_i,
        cluster_joint_v=joint_v,
        cluster_joint_i=joint_i,
        n_absorbed=n_absorbed,
        memory_policy="ema" if policy_v == policy_i == "ema" else "reinit",
        extras={"memory_policy_v": policy_v, "memory_policy_i": policy_i},
    )


def _blend(old: np.ndarray, unit: np.ndarray, labels: np.ndarray, n_ids: int, alpha: float) -> CenterMemory:
    if n_ids == 0:
        return CenterMemory(np.empty((0, unit.shape[1])), alpha)
    fresh = memory_from_labels(unit, labels, n_ids, alpha)
    return memory_update(CenterMemory(old, alpha), fresh.centers, alpha).normalized()
