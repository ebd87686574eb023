"""Two-stage orchestration over embedding sets.

Stage 1 (pre-training) pseudo-labels each target modality on its own,
initializes the four center memories and evaluates the domain-shared
adversarial loss terms. Stage 2 (fine-tuning) reloads the stage-1 artifacts
from disk, aligns the modalities into joint labels, builds the holistic
reference memory and evaluates the consistency loss and the final loss.

The encoder is out of scope: each call is one "epoch" worth of label
generation and loss evaluation on fixed embeddings.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alignment import SGMResult, sgm_pipeline
from .clustering import crmr_refine_detailed
from .config import PipelineConfig, format_config, load_config
from .core import INFRARED, SOURCE, TARGET, UNLABELED, VISIBLE, CenterMemory, EmbeddingSet, memory_init
from .errors import DegenerateStageError, MetadataError, ParameterError
from .fileio import (
    atomic_write_text,
    read_embeddings,
    read_labels,
    read_memory,
    read_table,
    write_embeddings,
    write_labels,
    write_memory,
    write_table,
)
from .losses import (
    DSALTerms,
    cmcc_loss,
    discriminator_loss,
    final_loss,
    generator_adversarial_loss,
    memory_contrastive_loss,
    reference_memory,
    unified_memory,
)
from .synthbench import majority_map, matching_accuracy, pairwise_label_metrics

log = logging.getLogger(__name__)

PROB_EPS = 1e-6
MEMORY_NAMES = ("source_visible", "source_infrared", "target_visible", "target_infrared")


@dataclass
class StageReport:
    """Ordered ``key -> value`` rows, written as a two-column TSV."""

    stage: str
    rows: list[tuple[str, object]] = field(default_factory=list)

    def add(self, key: str, value) -> None:
        self.rows.append((key, value))

    def get(self, key: str):
        for k, v in self.rows:
            if k == key:
                return v
        raise KeyError(key)

    def write(self, path) -> None:
        write_table(path, ("key", "value"), [("stage", self.stage)] + self.rows)


def read_report(path) -> dict[str, str]:
    header, rows = read_table(path)
    if header != ["key", "value"]:
        raise MetadataError(f"{path}: not a report file")
    return {r[0]: r[1] for r in rows}


def synthetic_domain_probs(source: EmbeddingSet, target: EmbeddingSet, sharpness: float = 4.0) -> np.ndarray:
    """Deterministic stand-in discriminator: a logistic probe along the domain-mean gap.

    Returns P(target) for source rows followed by target rows, clipped into
    ``[PROB_EPS, 1 - PROB_EPS]``.
    """
    xs, xt = source.data, target.data
    direction = xt.mean(axis=0) - xs.mean(axis=0)
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        return np.full(len(source) + len(target), 0.5)
    direction /= norm
    mid = 0.5 * (xs.mean(axis=0) + xt.mean(axis=0)) @ direction
    score = np.concatenate([xs, xt]) @ direction - mid
    prob = 1.0 / (1.0 + np.exp(-sharpness * score))
    return np.clip(prob, PROB_EPS, 1.0 - PROB_EPS)


def read_probs(path) -> np.ndarray:
    values = [float(line) for line in Path(path).read_text(encoding="utf-8").split()]
    return np.asarray(values, dtype=np.float64)


def _split(emb: EmbeddingSet, domain: str) -> tuple[EmbeddingSet, EmbeddingSet]:
    part = emb.select(domain=domain)
    if len(part) != len(emb):
        raise ParameterError(f"expected only {domain} rows")
    return part.select(modality=VISIBLE), part.select(modality=INFRARED)


def _memory(emb: EmbeddingSet, labels: np.ndarray, n_ids: int, alpha: float) -> CenterMemory:
    if n_ids == 0:
        return CenterMemory(np.empty((0, emb.dim)), alpha)
    return memory_init(emb.with_labels(labels), n_ids, alpha).normalized()


def dsal_terms(
    cfg: PipelineConfig,
    probs: np.ndarray,
    src_v: EmbeddingSet,
    src_i: EmbeddingSet,
    tgt_v: EmbeddingSet,
    tgt_i: EmbeddingSet,
    labels_tv: np.ndarray,
    labels_ti: np.ndarray,
    memories: dict[str, CenterMemory],
) -> DSALTerms:
    """All seven terms. Target rows labeled -1 sit out the contrastive terms."""
    n_src = len(src_v) + len(src_i)
    n_all = n_src + len(tgt_v) + len(tgt_i)
    if probs.shape != (n_all,):
        raise ParameterError(f"need {n_all} domain probabilities (source rows, then target rows), got {probs.size}")
    domain = np.concatenate([np.zeros(n_src), np.ones(n_all - n_src)])
    m_st_v = unified_memory(memories["source_visible"], memories["target_visible"])
    m_st_i = unified_memory(memories["source_infrared"], memories["target_infrared"])
    n_s = len(memories["source_visible"])
    t = cfg.contrastive_temperature

    def contrast(emb, labels, mem, offset):
        keep = labels >= 0
        return memory_contrastive_loss(emb.data[keep], labels[keep], mem, offset, t).value

    return DSALTerms(
        discriminator=discriminator_loss(probs, domain).value,
        generator=generator_adversarial_loss(probs).value,
        source_visible=contrast(src_v, src_v.label, m_st_v, 0),
        source_infrared=contrast(src_i, src_i.label, m_st_i, 0),
        source_cross=contrast(src_v, src_v.label, m_st_i, 0) + contrast(src_i, src_i.label, m_st_v, 0),
        target_visible=contrast(tgt_v, labels_tv, m_st_v, n_s),
        target_infrared=contrast(tgt_i, labels_ti, m_st_i, n_s),
    )


def _ordered_probs(probs, source: EmbeddingSet, target: EmbeddingSet) -> np.ndarray:
    """Reorder row-ordered probabilities to (source V, source I, target V, target I)."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (len(source) + len(target),):
        raise ParameterError(f"need {len(source) + len(target)} domain probabilities, got {probs.size}")
    ps, pt = probs[: len(source)], probs[len(source) :]
    return np.concatenate(
        [ps[source.modality == VISIBLE], ps[source.modality == INFRARED], pt[target.modality == VISIBLE], pt[target.modality == INFRARED]]
    )


def _quality_rows(report: StageReport, prefix: str, pred: np.ndarray, truth: np.ndarray) -> None:
    q = pairwise_label_metrics(pred, truth)
    report.add(f"{prefix}_pairwise_precision", q.pairwise_precision)
    report.add(f"{prefix}_pairwise_recall", q.pairwise_recall)
    report.add(f"{prefix}_pairwise_f1", q.pairwise_f1)
    report.add(f"{prefix}_n_discarded", q.n_discarded)


@dataclass
class PretrainResult:
    config: PipelineConfig
    source: EmbeddingSet  # normalized
    target: EmbeddingSet  # normalized, labels untouched
    pseudo_labels: np.ndarray  # per target row, per-modality cluster ids
    memories: dict[str, CenterMemory]
    terms: DSALTerms
    report: StageReport

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_embeddings(self.source, out / "source.emb")
        write_embeddings(self.target, out / "target.emb")
        write_labels(out / "pseudo_labels.tsv", self.target.sample_id, self.target.modality, self.pseudo_labels)
        for name in MEMORY_NAMES:
            write_memory(self.memories[name], out / f"memory_{name}.emb")
        atomic_write_text(out / "config.cfg", format_config(self.config))
        self.report.write(out / "report.tsv")


def run_pretrain_stage(
    cfg: PipelineConfig,
    source: EmbeddingSet,
    target: EmbeddingSet,
    domain_probs=None,
    truth=None,
) -> PretrainResult:
    """Stage 1: per-modality pseudo labels, the four memories and the adversarial loss terms.

    ``domain_probs`` are discriminator outputs P(target) in row order
    (source rows then target rows); when omitted a deterministic linear
    probe stands in. ``truth`` (true target identities, row order) only
    adds label-quality rows to the report.
    """
    cfg.validate()
    source, target = source.normalized(), target.normalized()
    src_v, src_i = _split(source, SOURCE)
    tgt_v, tgt_i = _split(target, TARGET)
    if len(src_v) == 0 or len(src_i) == 0:
        raise DegenerateStageError("source domain needs both visible and infrared rows")
    if np.any(source.label < 0):
        raise ParameterError("every source row needs an identity label")
    n_s = max(src_v.identity_count(), src_i.identity_count())

    refine_v = crmr_refine_detailed(tgt_v.data, cfg.eps1_v, cfg.eps2_v, cfg.min_pts, cfg.min_cluster_size)
    refine_i = crmr_refine_detailed(tgt_i.data, cfg.eps1_i, cfg.eps2_i, cfg.min_pts, cfg.min_cluster_size)
    if len(refine_v.clusters) == 0 or len(refine_i.clusters) == 0:
        raise DegenerateStageError("target clustering produced no reliable clusters (all noise)")

    memories = {
        "source_visible": _memory(src_v, src_v.label, n_s, cfg.alpha),
        "source_infrared": _memory(src_i, src_i.label, n_s, cfg.alpha),
        "target_visible": _memory(tgt_v, refine_v.labels, len(refine_v.clusters), cfg.alpha),
        "target_infrared": _memory(tgt_i, refine_i.labels, len(refine_i.clusters), cfg.alpha),
    }

    probs_given = domain_probs is not None
    probs = domain_probs if probs_given else synthetic_domain_probs(source, target)
    probs = _ordered_probs(probs, source, target)
    terms = dsal_terms(cfg, probs, src_v, src_i, tgt_v, tgt_i, refine_v.labels, refine_i.labels, memories)

    pseudo = np.full(len(target), UNLABELED, dtype=np.int64)
    pseudo[target.modality == VISIBLE] = refine_v.labels
    pseudo[target.modality == INFRARED] = refine_i.labels

    report = StageReport("pretrain")
    for key, value in [
        ("n_source_visible", len(src_v)),
        ("n_source_infrared", len(src_i)),
        ("n_target_visible", len(tgt_v)),
        ("n_target_infrared", len(tgt_i)),
        ("source_identities", n_s),
        ("clusters_eps1_visible", len(refine_v.coarse)),
        ("clusters_eps2_visible", len(refine_v.fine)),
        ("clusters_eps1_infrared", len(refine_i.coarse)),
        ("clusters_eps2_infrared", len(refine_i.fine)),
        ("clusters_visible", len(refine_v.clusters)),
        ("clusters_infrared", len(refine_i.clusters)),
        ("discarded_visible", int(np.sum(refine_v.labels < 0))),
        ("discarded_infrared", int(np.sum(refine_i.labels < 0))),
        ("domain_probs", "supplied" if probs_given else "synthetic"),
    ]:
        report.add(key, value)
    for name, value in terms.items():
        report.add(f"loss_{name}", value)
    report.add("loss_dsal_total", terms.total)
    report.add("contrastive_form", "mean_n(-log softmax)")
    if truth is not None:
        truth = np.asarray(truth, dtype=np.int64)
        for modality, refine in ((VISIBLE, refine_v), (INFRARED, refine_i)):
            _quality_rows(report, modality, refine.labels, truth[target.modality == modality])

    return PretrainResult(cfg, source, target, pseudo, memories, terms, report)


@dataclass
class Stage1Artifacts:
    config: PipelineConfig
    source: EmbeddingSet
    target: EmbeddingSet
    pseudo_labels: np.ndarray
    memories: dict[str, CenterMemory]


def load_stage1(stage1_dir) -> Stage1Artifacts:
    d = Path(stage1_dir)
    needed = ["source.emb", "target.emb", "pseudo_labels.tsv", "config.cfg"] + [f"memory_{n}.emb" for n in MEMORY_NAMES]
    missing = [n for n in needed if not (d / n).exists()]
    if missing:
        raise MetadataError(f"stage-1 directory {d} lacks {', '.join(missing)}")
    cfg = load_config(d / "config.cfg")
    target = read_embeddings(d / "target.emb")
    by_id = read_labels(d / "pseudo_labels.tsv")
    try:
        pseudo = np.array([by_id[s] for s in target.sample_id], dtype=np.int64)
    except KeyError as exc:
        raise MetadataError(f"pseudo_labels.tsv lacks sample {exc.args[0]}") from None
    return Stage1Artifacts(
        config=cfg,
        source=read_embeddings(d / "source.emb"),
        target=target,
        pseudo_labels=pseudo,
        memories={n: read_memory(d / f"memory_{n}.emb", cfg.alpha) for n in MEMORY_NAMES},
    )


@dataclass
class FinetuneResult:
    config: PipelineConfig
    target: EmbeddingSet
    joint_labels: np.ndarray  # per target row
    sgm: SGMResult
    memories: dict[str, CenterMemory]
    confidences: np.ndarray
    identities: np.ndarray
    terms: DSALTerms
    cmcc: float
    final: float
    n_excluded: int
    report: StageReport

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_labels(out / "joint_labels.tsv", self.target.sample_id, self.target.modality, self.joint_labels)
        yv = self.sgm.labels_v
        yi = self.sgm.labels_i
        write_table(
            out / "confidences.tsv",
            ("joint_id", "confidence", "n_visible", "n_infrared"),
            [(int(j), float(c), int(np.sum(yv == j)), int(np.sum(yi == j))) for j, c in zip(self.identities, self.confidences)],
        )
        for name in MEMORY_NAMES:
            write_memory(self.memories[name], out / f"memory_{name}.emb")
        atomic_write_text(out / "config.cfg", format_config(self.config))
        self.report.write(out / "report.tsv")


def run_finetune_stage(
    cfg: PipelineConfig,
    stage1_dir,
    domain_probs=None,
    truth=None,
) -> FinetuneResult:
    """Stage 2 from serialized stage-1 artifacts only.

    Memories from stage 1 seed the target memories: when re-clustering
    yields the same cluster count they are EMA-blended, otherwise rebuilt.
    The chosen policy is recorded in the report.
    """
    cfg.validate()
    art = load_stage1(stage1_dir)
    source, target = art.source.normalized(), art.target.normalized()
    src_v, src_i = _split(source, SOURCE)
    tgt_v, tgt_i = _split(target, TARGET)

    sgm = sgm_pipeline(
        tgt_v,
        tgt_i,
        cfg.sgm_params(),
        prior_v=art.memories["target_visible"],
        prior_i=art.memories["target_infrared"],
    )
    if sgm.n_joint == 0:
        raise DegenerateStageError("alignment produced no joint identities")

    yv, yi = sgm.labels_v.copy(), sgm.labels_i.copy()
    lacking = np.setxor1d(np.unique(yv[yv >= 0]), np.unique(yi[yi >= 0]))
    if lacking.size:
        log.warning("%d joint identities lack a modality and are excluded", lacking.size)
        yv[np.isin(yv, lacking)] = UNLABELED
        yi[np.isin(yi, lacking)] = UNLABELED

    memories = {
        "source_visible": art.memories["source_visible"],
        "source_infrared": art.memories["source_infrared"],
        "target_visible": sgm.mem_v,
        "target_infrared": sgm.mem_i,
    }
    ref = reference_memory(*(memories[n] for n in MEMORY_NAMES))
    cm = cmcc_loss(tgt_v.data, yv, tgt_i.data, yi, ref, cfg.tau, cfg.cmcc_mode)

    probs_given = domain_probs is not None
    probs = domain_probs if probs_given else synthetic_domain_probs(source, target)
    probs = _ordered_probs(probs, source, target)
    terms = dsal_terms(cfg, probs, src_v, src_i, tgt_v, tgt_i, yv, yi, memories)
    dsal = terms.total
    final = final_loss(dsal, cm.value, cfg.psi, cfg.cmcc_active)

    joint = np.full(len(target), UNLABELED, dtype=np.int64)
    joint[target.modality == VISIBLE] = yv
    joint[target.modality == INFRARED] = yi

    report = StageReport("finetune")
    for key, value in [
        ("clusters_visible", len(sgm.refine_v.clusters)),
        ("clusters_infrared", len(sgm.refine_i.clusters)),
        ("matched_pairs", len(sgm.assignment)),
        ("matching_cost", sgm.assignment.total_cost),
        ("supplementary_absorbed", sgm.n_absorbed),
        ("joint_identities", sgm.n_joint),
        ("excluded_identities", int(lacking.size)),
        ("discarded_visible", int(np.sum(yv < 0))),
        ("discarded_infrared", int(np.sum(yi < 0))),
        ("memory_policy", sgm.memory_policy),
        ("reference_rows", len(ref)),
        ("mean_confidence", float(np.mean(cm.confidence)) if cm.confidence.size else 0.0),
        ("domain_probs", "supplied" if probs_given else "synthetic"),
    ]:
        report.add(key, value)
    for name, value in terms.items():
        report.add(f"loss_{name}", value)
    report.add("loss_dsal_total", dsal)
    report.add("loss_cmcc", cm.value)
    report.add("cmcc_active", cfg.cmcc_active)
    report.add("psi", cfg.psi)
    report.add("loss_final", final)
    if truth is not None:
        truth = np.asarray(truth, dtype=np.int64)
        tv, ti = truth[target.modality == VISIBLE], truth[target.modality == INFRARED]
        _quality_rows(report, "joint", np.concatenate([yv, yi]), np.concatenate([tv, ti]))
        acc = matching_accuracy(sgm.assignment, majority_map(sgm.refine_v.labels, tv), majority_map(sgm.refine_i.labels, ti))
        report.add("matching_accuracy", acc)

    return FinetuneResult(
        cfg, target, joint, sgm, memories, cm.confidence, cm.identities, terms, cm.value, final, int(lacking.size), report
    )
