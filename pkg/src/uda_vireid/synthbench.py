"""Seeded synthetic cross-domain, cross-modality embeddings and label-quality metrics.

Identities are random unit prototypes. The infrared modality is a fixed
rotation of the visible one, the target domain is a further fixed rotation,
and samples add isotropic Gaussian noise. Every random stage draws from its
own child of one ``SeedSequence`` so adding a stage never shifts another
stage's draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.linalg import expm

from .alignment import Assignment
from .core import INFRARED, SOURCE, TARGET, UNLABELED, VISIBLE, EmbeddingSet
from .errors import ParameterError, ShapeError

MIN_PROTOTYPE_DISTANCE = 0.5
_MAX_REJECTIONS = 10_000

# fixed order of SeedSequence children; append only
_STAGES = (
    "source_prototypes",
    "target_prototypes",
    "modality",
    "domain",
    "source_noise",
    "target_noise",
    "source_order",
    "target_order",
)


@dataclass(frozen=True)
class SynthConfig:
    n_identities: int = 20
    samples_per_modality: int = 8
    dim: int = 64
    modality_offset_scale: float = 0.3
    domain_offset_scale: float = 0.3
    noise_std: float = 0.05
    identities_missing_in_infrared: int = 0
    seed: int = 0
    min_prototype_distance: float = MIN_PROTOTYPE_DISTANCE

    def validate(self) -> None:
        if self.dim < 2:
            raise ParameterError(f"dim must be >= 2, got {self.dim}")
        for name in ("n_identities", "samples_per_modality", "identities_missing_in_infrared"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")
        for name in ("modality_offset_scale", "domain_offset_scale", "noise_std"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")
        if self.identities_missing_in_infrared > self.n_identities:
            raise ParameterError("cannot drop more identities than exist")
        if not 0 <= self.seed < 2**64:
            raise ParameterError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class SynthTruth:
    target_labels: np.ndarray
    source_prototypes: np.ndarray
    target_prototypes: np.ndarray
    modality_transform: np.ndarray
    domain_transform: np.ndarray


def _rngs(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(_STAGES))
    return {name: np.random.Generator(np.random.PCG64(child)) for name, child in zip(_STAGES, children)}


def draw_prototypes(rng: np.random.Generator, n: int, dim: int, min_distance: float) -> np.ndarray:
    """Random unit vectors, pairwise cosine distance >= ``min_distance`` (rejection sampling)."""
    protos = np.empty((n, dim))
    for c in range(n):
        for _ in range(_MAX_REJECTIONS):
            v = rng.standard_normal(dim)
            v /= np.linalg.norm(v)
            if c == 0 or np.all(1.0 - protos[:c] @ v >= min_distance):
                protos[c] = v
                break
        else:
            raise ParameterError(f"could not place {n} prototypes {min_distance} apart in {dim} dimensions")
    return protos


def partial_rotation(rng: np.random.Generator, dim: int, scale: float) -> np.ndarray:
    """``expm(scale * A)`` for a random skew-symmetric A with unit-order rotation angle.

    ``scale = 0`` gives the identity; the result is always orthogonal.
    """
    g = rng.standard_normal((dim, dim))
    skew = (g - g.T) / np.sqrt(2.0 * dim)
    if scale == 0:
        return np.eye(dim)
    return expm(scale * skew)


def generate_synthetic(cfg: SynthConfig) -> tuple[EmbeddingSet, EmbeddingSet, SynthTruth]:
    """Return ``(source, target, truth)``.

    Source rows carry their identity labels; target rows are unlabeled and
    their identities live in ``truth.target_labels``. The last
    ``identities_missing_in_infrared`` target identities have no infrared
    samples. Rows of each modality block are shuffled so cluster order
    carries no hint of identity.
    """
    cfg.validate()
    rng = _rngs(cfg.seed)
    n, d, spm = cfg.n_identities, cfg.dim, cfg.samples_per_modality
    src_protos = draw_prototypes(rng["source_prototypes"], n, d, cfg.min_prototype_distance)
    tgt_protos = draw_prototypes(rng["target_prototypes"], n, d, cfg.min_prototype_distance)
    modality_rot = partial_rotation(rng["modality"], d, cfg.modality_offset_scale)
    domain_rot = partial_rotation(rng["domain"], d, cfg.domain_offset_scale)

    def build(domain, protos, ids_by_modality):
        noise_rng, order_rng = rng[f"{domain}_noise"], rng[f"{domain}_order"]
        blocks = []
        for modality, ids in ids_by_modality:
            base = protos if modality == VISIBLE else protos @ modality_rot.T
            if domain == TARGET:
                base = base @ domain_rot.T
            labels = np.repeat(ids, spm)
            data = base[labels] + cfg.noise_std * noise_rng.standard_normal((labels.size, d))
            order = order_rng.permutation(labels.size)
            blocks.append((modality, data[order], labels[order]))
        data = np.concatenate([b[1] for b in blocks]) if blocks else np.empty((0, d))
        labels = np.concatenate([b[2] for b in blocks]).astype(np.int64)
        modality = np.concatenate([np.full(b[2].size, b[0]) for b in blocks])
        sample_id = np.array([f"{domain[0]}{m[0]}{i:06d}" for i, m in enumerate(modality)])
        return data, labels, modality, sample_id

    all_ids = np.arange(n)
    ir_ids = np.arange(n - cfg.identities_missing_in_infrared)

    s_data, s_labels, s_mod, s_sid = build(SOURCE, src_protos, [(VISIBLE, all_ids), (INFRARED, all_ids)])
    t_data, t_labels, t_mod, t_sid = build(TARGET, tgt_protos, [(VISIBLE, all_ids), (INFRARED, ir_ids)])

    source = EmbeddingSet(s_data, np.full(len(s_labels), SOURCE), s_mod, s_labels, np.arange(len(s_labels)), s_sid)
    target = EmbeddingSet(
        t_data, np.full(len(t_labels), TARGET), t_mod, np.full(len(t_labels), UNLABELED), np.arange(len(t_labels)), t_sid
    )
    truth = SynthTruth(t_labels, src_protos, tgt_protos, modality_rot, domain_rot)
    return source, target, truth


@dataclass(frozen=True)
class QualityReport:
    pairwise_precision: float
    pairwise_recall: float
    pairwise_f1: float
    n_discarded: int
    n_pairs: int  # pairs evaluated (neither side discarded)
    matching_accuracy: float | None = None

    def as_rows(self) -> list[tuple[str, object]]:
        return [
            ("pairwise_precision", self.pairwise_precision),
            ("pairwise_recall", self.pairwise_recall),
            ("pairwise_f1", self.pairwise_f1),
            ("n_discarded", self.n_discarded),
            ("n_pairs", self.n_pairs),
            ("matching_accuracy", self.matching_accuracy),
        ]


def _pairs_within(counts: np.ndarray) -> int:
    counts = counts.astype(np.int64)
    return int(np.sum(counts * (counts - 1) // 2))


def pairwise_label_metrics(pred, truth) -> QualityReport:
    """Pair-counting precision/recall/F1 of predicted labels against truth.

    Pairs touching a -1 prediction are left out. When no pair survives all
    three metrics are reported as 0.
    """
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    if pred.shape != truth.shape:
        raise ShapeError(f"{pred.size} predictions but {truth.size} truth labels")
    keep = pred != UNLABELED
    n_discarded = int(np.sum(~keep))
    p, t = pred[keep], truth[keep]
    n_kept = p.size
    n_pairs = n_kept * (n_kept - 1) // 2
    if n_kept == 0:
        return QualityReport(0.0, 0.0, 0.0, n_discarded, 0)

    _, p_idx = np.unique(p, return_inverse=True)
    _, t_idx = np.unique(t, return_inverse=True)
    table = np.zeros((p_idx.max() + 1, t_idx.max() + 1), dtype=np.int64)
    np.add.at(table, (p_idx, t_idx), 1)
    tp = _pairs_within(table.ravel())
    same_pred = _pairs_within(table.sum(axis=1))
    same_truth = _pairs_within(table.sum(axis=0))

    precision = tp / same_pred if same_pred else 0.0
    recall = tp / same_truth if same_truth else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision > 0 and recall > 0 else 0.0
    return QualityReport(float(precision), float(recall), float(f1), n_discarded, int(n_pairs))


def majority_map(cluster_labels, truth) -> dict[int, int]:
    """Cluster id -> most frequent true identity among its members (lowest id on ties)."""
    cluster_labels = np.asarray(cluster_labels, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    out = {}
    for c in np.unique(cluster_labels[cluster_labels >= 0]):
        ids, counts = np.unique(truth[cluster_labels == c], return_counts=True)
        out[int(c)] = int(ids[np.argmax(counts)])
    return out


def matching_accuracy(assignment: Assignment, truth_v: Mapping[int, int], truth_i: Mapping[int, int]) -> float:
    """Fraction of matched pairs whose clusters have the same majority identity (0 for no pairs)."""
    if len(assignment) == 0:
        return 0.0
    hits = sum(1 for v, i in assignment.pairs if truth_v[int(v)] == truth_i[int(i)])
    return hits / len(assignment)
