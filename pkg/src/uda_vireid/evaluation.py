"""Rank-k (CMC), mAP and mINP for cosine-ranked query/gallery retrieval."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import EmbeddingSet, cosine_similarity_matrix
from .errors import ParameterError, ShapeError

DEFAULT_RANKS = (1, 5, 10, 20)


@dataclass(frozen=True)
class RetrievalMetrics:
    cmc: dict[int, float]
    mAP: float
    mINP: float
    n_queries: int
    n_valid: int
    curve: np.ndarray  # CMC at ranks 1..max(ranks)

    @property
    def n_skipped(self) -> int:
        return self.n_queries - self.n_valid

    def as_rows(self) -> list[tuple[str, float | int]]:
        rows: list[tuple[str, float | int]] = [(f"rank{k}", v) for k, v in self.cmc.items()]
        rows += [("mAP", self.mAP), ("mINP", self.mINP), ("n_queries", self.n_queries), ("n_skipped", self.n_skipped)]
        return rows


def evaluate_ranking(
    similarity,
    query_ids,
    query_cams,
    gallery_ids,
    gallery_cams,
    ranks=DEFAULT_RANKS,
) -> RetrievalMetrics:
    """Metrics from a Q x G similarity matrix (higher is closer).

    Gallery entries sharing both identity and camera with the query are
    removed before scoring. Equal similarities keep gallery order. Queries
    with no remaining true match are skipped and counted. Per-query AP is
    summed in exact rationals and rounded once.
    """
    sim = np.asarray(similarity, dtype=np.float64)
    q_ids, q_cams = np.asarray(query_ids), np.asarray(query_cams)
    g_ids, g_cams = np.asarray(gallery_ids), np.asarray(gallery_cams)
    if sim.shape != (q_ids.size, g_ids.size):
        raise ShapeError(f"similarity {sim.shape} vs {q_ids.size} queries x {g_ids.size} gallery")
    ranks = tuple(int(k) for k in ranks)
    if not ranks or min(ranks) < 1:
        raise ParameterError("ranks must be positive integers")
    max_rank = max(ranks)

    order = np.argsort(-sim, axis=1, kind="stable")
    curve = np.zeros(max_rank)
    aps, inps = [], []
    n_valid = 0
    for q in range(q_ids.size):
        ranked = order[q]
        keep = ~((g_ids[ranked] == q_ids[q]) & (g_cams[ranked] == q_cams[q]))
        hits = g_ids[ranked[keep]] == q_ids[q]
        positions = np.flatnonzero(hits)
        if positions.size == 0:
            continue
        n_valid += 1
        curve[positions[0] :] += 1.0
        ap = sum(Fraction(i + 1, int(r) + 1) for i, r in enumerate(positions)) / positions.size
        aps.append(float(ap))
        inps.append(positions.size / (int(positions[-1]) + 1))

    if n_valid == 0:
        return RetrievalMetrics({k: 0.0 for k in ranks}, 0.0, 0.0, int(q_ids.size), 0, curve)
    curve /= n_valid
    return RetrievalMetrics(
        {k: float(curve[k - 1]) for k in ranks},
        math.fsum(aps) / n_valid,
        math.fsum(inps) / n_valid,
        int(q_ids.size),
        n_valid,
        curve,
    )


def evaluate_retrieval(query: EmbeddingSet, gallery: EmbeddingSet, ranks=DEFAULT_RANKS) -> RetrievalMetrics:
    """Rank the gallery for every query by cosine similarity and score the lists."""
    if len(query) and len(gallery):
        sim = cosine_similarity_matrix(query.data, gallery.data)
    else:
        sim = np.zeros((len(query), len(gallery)))
    return evaluate_ranking(sim, query.label, query.camera, gallery.label, gallery.camera, ranks)
