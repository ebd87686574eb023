"""Adversarial, memory-contrastive and cross-modality consistency losses.

Every loss returns its value together with the analytic gradient with
respect to the input it consumes (features or probabilities). Memories are
treated as constants, as they are during training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Callable

import numpy as np

from .core import CenterMemory, _as_matrix
from .errors import DomainError, LabelError, ModalityGapError, ParameterError, ShapeError, ZeroVectorError

DEFAULT_TAU = 0.05
DEFAULT_PSI = 0.5


@dataclass(frozen=True)
class LossResult:
    value: float
    grad: np.ndarray


@dataclass(frozen=True)
class UnifiedMemory:
    """Row-wise concatenation of center memories; ``offset`` is the row count of the first block."""

    centers: np.ndarray
    offset: int

    def __len__(self) -> int:
        return self.centers.shape[0]


def unified_memory(first: CenterMemory, second: CenterMemory) -> UnifiedMemory:
    if first.dim != second.dim:
        raise ShapeError(f"memory dimensions differ: {first.dim} vs {second.dim}")
    return UnifiedMemory(np.concatenate([first.centers, second.centers], axis=0), len(first))


def reference_memory(*memories: CenterMemory) -> UnifiedMemory:
    """Concatenate any number of memories (source V, source I, target V, target I)."""
    dims = {m.dim for m in memories}
    if len(dims) != 1:
        raise ShapeError(f"memory dimensions differ: {sorted(dims)}")
    return UnifiedMemory(np.concatenate([m.centers for m in memories], axis=0), len(memories[0]))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(np.atleast_2d(logits)))


def _softmax_vjp(prob: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    # d/dz of <upstream, softmax(z)>, row-wise
    return prob * (upstream - np.sum(prob * upstream, axis=1, keepdims=True))


def discriminator_loss(probs, domain_labels) -> LossResult:
    """Binary cross-entropy of predicted target-domain probabilities.

    Probabilities must lie strictly inside (0, 1); clamping is the caller's
    job. The gradient is taken with respect to ``probs``.
    """
    p = np.asarray(probs, dtype=np.float64).reshape(-1)
    d = np.asarray(domain_labels, dtype=np.float64).reshape(-1)
    if p.shape != d.shape:
        raise ShapeError(f"{p.size} probabilities but {d.size} domain labels")
    if p.size == 0:
        raise ShapeError("empty batch")
    if not np.all((p > 0.0) & (p < 1.0)):
        raise DomainError("discriminator probabilities must lie strictly inside (0, 1)")
    if not np.all((d == 0.0) | (d == 1.0)):
        raise DomainError("domain labels must be 0 or 1")
    n = p.size
    value = -np.mean(d * np.log(p) + (1.0 - d) * np.log1p(-p))
    grad = -(d / p - (1.0 - d) / (1.0 - p)) / n
    return LossResult(float(value), grad)


def generator_adversarial_loss(probs) -> LossResult:
    """Mean squared distance of the discriminator output from 0.5."""
    p = np.asarray(probs, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise ShapeError("empty batch")
    if not np.all(np.isfinite(p)):
        raise DomainError("probabilities must be finite")
    dev = p - 0.5
    return LossResult(float(np.mean(dev * dev)), 2.0 * dev / p.size)


def memory_contrastive_loss(
    features,
    labels,
    umem: UnifiedMemory,
    label_offset: int = 0,
    temperature: float = 1.0,
) -> LossResult:
    """Mean cross-entropy of each feature against the memory rows.

    Sample n scores ``F_n . M[k] / temperature`` over every row k; the
    positive row is ``labels[n] + label_offset``. Labels index one block of
    the unified memory, the offset selects the block.
    """
    x = _as_matrix(features)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    mem = umem.centers
    if temperature <= 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    if y.shape[0] != x.shape[0]:
        raise ShapeError(f"{x.shape[0]} features but {y.shape[0]} labels")
    if x.shape[0] == 0:
        return LossResult(0.0, np.zeros_like(x))
    if x.shape[1] != mem.shape[1]:
        raise ShapeError(f"feature dim {x.shape[1]} != memory dim {mem.shape[1]}")
    target = y + label_offset
    if np.any(y < 0) or np.any(target >= mem.shape[0]):
        raise LabelError(f"labels must index memory rows [0, {mem.shape[0]}) after offset {label_offset}")

    n = x.shape[0]
    rows = np.arange(n)
    log_p = _log_softmax(x @ mem.T / temperature)
    value = -math.fsum(log_p[rows, target]) / n
    coeff = np.exp(log_p)
    coeff[rows, target] -= 1.0
    grad = coeff @ mem / (temperature * n)
    return LossResult(value, grad)


@dataclass(frozen=True)
class DSALTerms:
    """The seven domain-shared adversarial terms, in summation order."""

    discriminator: float = 0.0
    generator: float = 0.0
    source_visible: float = 0.0
    source_infrared: float = 0.0
    source_cross: float = 0.0
    target_visible: float = 0.0
    target_infrared: float = 0.0

    def items(self) -> list[tuple[str, float]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    @property
    def total(self) -> float:
        return dsal_total(self)


def dsal_total(terms: DSALTerms) -> float:
    total = 0.0
    for _, value in terms.items():
        total = total + value
    return total


def holistic_distribution(features, ref: UnifiedMemory, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Row-wise ``softmax(F M_ref^T / tau)``."""
    if tau <= 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    x = _as_matrix(features)
    return softmax(x @ ref.centers.T / tau)


def cmcc_confidence(h_v_center, h_i_center) -> float:
    """Cosine similarity between the mean visible and infrared distributions."""
    a = np.asarray(h_v_center, dtype=np.float64).reshape(-1)
    b = np.asarray(h_i_center, dtype=np.float64).reshape(-1)
    na, nb = math.sqrt(a @ a), math.sqrt(b @ b)
    if na == 0.0:
        raise ZeroVectorError(0, "distribution")
    if nb == 0.0:
        raise ZeroVectorError(1, "distribution")
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class CMCCResult(LossResult):
    """CMCC loss; ``grad`` covers visible rows followed by infrared rows."""

    grad_v: np.ndarray = None
    grad_i: np.ndarray = None
    confidence: np.ndarray = None  # per joint identity
    identities: np.ndarray = None  # joint identity ids, in the same order


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    support = p > 0
    with np.errstate(divide="ignore"):
        return float(np.sum(p[support] * (np.log(p[support]) - np.log(q[support]))))


def weighted_kl_terms(h_v_centers, h_i_centers) -> np.ndarray:
    """Per-identity ``cos(H_V, H_I) * KL(H_V || H_I)`` from center distributions.

    A zero confidence contributes exactly 0, even where the KL is infinite.
    """
    hv = np.atleast_2d(np.asarray(h_v_centers, dtype=np.float64))
    hi = np.atleast_2d(np.asarray(h_i_centers, dtype=np.float64))
    if hv.shape != hi.shape:
        raise ShapeError(f"distribution shapes differ: {hv.shape} vs {hi.shape}")
    out = np.zeros(hv.shape[0])
    for t in range(hv.shape[0]):
        sim = cmcc_confidence(hv[t], hi[t])
        out[t] = 0.0 if sim == 0.0 else sim * _kl(hv[t], hi[t])
    return out


def cmcc_loss(
    features_v,
    labels_v,
    features_i,
    labels_i,
    ref: UnifiedMemory,
    tau: float = DEFAULT_TAU,
    mode: str = "center",
    weights=None,
) -> CMCCResult:
    """Confidence-weighted KL between visible and infrared holistic distributions.

    For each joint identity the visible and infrared rows are softmaxed
    against the reference memory at temperature ``tau``. In ``"center"``
    mode the per-side means H_V, H_I are compared with ``KL(H_V || H_I)``;
    in ``"pairwise"`` mode the KL is averaged over every visible/infrared
    sample pair. Either way the term is weighted by ``cos(H_V, H_I)``, which
    receives no gradient, and the loss is the mean over identities. Rows
    labeled -1 are ignored.

    ``weights`` (one per joint identity, ascending id order) replaces the
    computed confidences; finite-difference checks use it to hold the
    stop-gradient weight fixed.
    """
    if mode not in ("center", "pairwise"):
        raise ParameterError(f"unknown CMCC mode {mode!r}")
    xv, xi = _as_matrix(features_v), _as_matrix(features_i)
    yv = np.asarray(labels_v, dtype=np.int64).reshape(-1)
    yi = np.asarray(labels_i, dtype=np.int64).reshape(-1)
    if yv.shape[0] != xv.shape[0] or yi.shape[0] != xi.shape[0]:
        raise ShapeError("labels and features disagree in length")

    ids = np.union1d(yv[yv >= 0], yi[yi >= 0])
    for identity in ids:
        if not np.any(yv == identity):
            raise ModalityGapError(int(identity), "visible")
        if not np.any(yi == identity):
            raise ModalityGapError(int(identity), "infrared")

    grad_v = np.zeros_like(xv)
    grad_i = np.zeros_like(xi)
    conf = np.zeros(ids.size)
    if ids.size == 0:
        return CMCCResult(0.0, np.zeros((xv.shape[0] + xi.shape[0], xv.shape[1])), grad_v, grad_i, conf, ids)

    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        if weights.shape != ids.shape:
            raise ShapeError(f"{weights.size} weights for {ids.size} identities")

    pv_all = holistic_distribution(xv, ref, tau)
    pi_all = holistic_distribution(xi, ref, tau)
    mem = ref.centers
    terms = []
    for t, identity in enumerate(ids):
        rv = np.flatnonzero(yv == identity)
        ri = np.flatnonzero(yi == identity)
        pv, pi = pv_all[rv], pi_all[ri]
        hv, hi = pv.mean(axis=0), pi.mean(axis=0)
        sim = cmcc_confidence(hv, hi) if weights is None else float(weights[t])
        conf[t] = sim
        if mode == "center":
            kl = _kl(hv, hi)
            up_v = np.broadcast_to(np.log(hv) - np.log(hi) + 1.0, pv.shape) / len(rv)
            up_i = np.broadcast_to(-hv / hi, pi.shape) / len(ri)
        else:
            lv, li = np.log(pv), np.log(pi)
            npairs = len(rv) * len(ri)
            kl = float(np.sum(pv * lv)) / len(rv) - float(np.sum(pv.mean(axis=0) * li.mean(axis=0)))
            up_v = (lv + 1.0 - li.mean(axis=0)) / npairs * len(ri)
            up_i = -np.broadcast_to(pv.mean(axis=0), pi.shape) / pi / len(ri)
        terms.append(0.0 if sim == 0.0 else sim * kl)
        grad_v[rv] += sim * _softmax_vjp(pv, up_v) @ mem / tau
        grad_i[ri] += sim * _softmax_vjp(pi, up_i) @ mem / tau

    n_ids = ids.size
    grad_v /= n_ids
    grad_i /= n_ids
    value = math.fsum(terms) / n_ids
    return CMCCResult(value, np.concatenate([grad_v, grad_i]), grad_v, grad_i, conf, ids)


def final_loss(dsal: float, cmcc: float, psi: float = DEFAULT_PSI, cmcc_active: bool = True) -> float:
    if psi < 0:
        raise ParameterError(f"psi must be non-negative, got {psi}")
    if not cmcc_active:
        return dsal
    return dsal + psi * cmcc


def finite_difference_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central differences ``(f(x + h e) - f(x - h e)) / 2h`` for every entry of ``x``."""
    if h <= 0:
        raise ParameterError(f"step must be positive, got {h}")
    x0 = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x0)
    flat = x0.reshape(-1)
    gflat = grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        plus = f(x0.copy())
        flat[j] = orig - h
        minus = f(x0.copy())
        flat[j] = orig
        gflat[j] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """``max|a - n| / max(max|a|, max|n|, floor)``; one scalar per comparison."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0), floor)
    return float(np.max(np.abs(a - n), initial=0.0) / scale)
