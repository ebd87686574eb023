"""Embedding containers, similarity kernels and center-memory primitives."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyIdentityError, ParameterError, ShapeError, ZeroVectorError

SOURCE, TARGET = "source", "target"
VISIBLE, INFRARED = "visible", "infrared"
DOMAINS = (SOURCE, TARGET)
MODALITIES = (VISIBLE, INFRARED)
UNLABELED = -1


def _as_matrix(x, name: str = "features") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class EmbeddingSet:
    """N x D features with per-row domain, modality, label and camera tags.

    ``label == -1`` marks an unlabeled or discarded row. ``camera`` and
    ``sample_id`` are only needed for retrieval evaluation and file output;
    they get sensible defaults when omitted.
    """

    data: np.ndarray
    domain: np.ndarray
    modality: np.ndarray
    label: np.ndarray
    camera: np.ndarray = field(default=None)
    sample_id: np.ndarray = field(default=None)

    def __post_init__(self):
        data = _as_matrix(self.data)
        n = data.shape[0]
        if data.shape[1] < 1:
            raise ShapeError("embedding dimension must be >= 1")
        if not np.all(np.isfinite(data)):
            raise ParameterError("embedding values must be finite")

        def column(values, default, dtype):
            if values is None:
                values = default
            col = np.asarray(values, dtype=dtype).reshape(-1)
            if col.shape[0] == 1 and n != 1:
                col = np.repeat(col, n)
            if col.shape[0] != n:
                raise ShapeError(f"metadata column has {col.shape[0]} rows, features have {n}")
            return col

        domain = column(self.domain, [TARGET] * n, str)
        modality = column(self.modality, [VISIBLE] * n, str)
        label = column(self.label, [UNLABELED] * n, np.int64)
        camera = column(self.camera, np.arange(n), np.int64)
        sample_id = column(self.sample_id, [f"s{i}" for i in range(n)], str)
        if n and not set(domain) <= set(DOMAINS):
            raise ParameterError(f"unknown domain tag in {sorted(set(domain))}")
        if n and not set(modality) <= set(MODALITIES):
            raise ParameterError(f"unknown modality tag in {sorted(set(modality))}")
        if np.any(label < UNLABELED):
            raise ParameterError("labels must be -1 or non-negative")

        for name, value in [
            ("data", data),
            ("domain", domain),
            ("modality", modality),
            ("label", label),
            ("camera", camera),
            ("sample_id", sample_id),
        ]:
            object.__setattr__(self, name, _frozen(value))

    @classmethod
    def from_features(cls, data, label=None, *, domain=TARGET, modality=VISIBLE, camera=None, sample_id=None):
        data = _as_matrix(data)
        n = data.shape[0]
        if label is None:
            label = np.full(n, UNLABELED)
        return cls(
            data=data,
            domain=np.full(n, domain) if isinstance(domain, str) else domain,
            modality=np.full(n, modality) if isinstance(modality, str) else modality,
            label=label,
            camera=camera,
            sample_id=sample_id,
        )

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def subset(self, index) -> "EmbeddingSet":
        index = np.asarray(index)
        return EmbeddingSet(
            data=self.data[index].reshape(-1, self.dim),
            domain=self.domain[index],
            modality=self.modality[index],
            label=self.label[index],
            camera=self.camera[index],
            sample_id=self.sample_id[index],
        )

    def select(self, *, domain: str | None = None, modality: str | None = None) -> "EmbeddingSet":
        mask = np.ones(len(self), dtype=bool)
        if domain is not None:
            mask &= self.domain == domain
        if modality is not None:
            mask &= self.modality == modality
        return self.subset(np.flatnonzero(mask))

    def with_labels(self, label) -> "EmbeddingSet":
        return EmbeddingSet(self.data, self.domain, self.modality, label, self.camera, self.sample_id)

    def with_data(self, data) -> "EmbeddingSet":
        return EmbeddingSet(data, self.domain, self.modality, self.label, self.camera, self.sample_id)

    def normalized(self) -> "EmbeddingSet":
        if len(self) == 0:
            return self
        return self.with_data(l2_normalize(self.data))

    def identity_count(self) -> int:
        return int(self.label.max()) + 1 if np.any(self.label >= 0) else 0


@dataclass(frozen=True)
class CenterMemory:
    """C x D bank of per-identity feature centers; row c belongs to identity c."""

    centers: np.ndarray
    update_rate: float = 0.5

    def __post_init__(self):
        centers = _as_matrix(self.centers, "centers")
        if not np.all(np.isfinite(centers)):
            raise ParameterError("memory centers must be finite")
        if not 0.0 <= self.update_rate <= 1.0:
            raise ParameterError(f"update rate must lie in [0, 1], got {self.update_rate}")
        object.__setattr__(self, "centers", _frozen(centers))

    def __len__(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def rows(self, index) -> "CenterMemory":
        index = np.asarray(index, dtype=np.int64)
        return CenterMemory(self.centers[index].reshape(-1, self.dim), self.update_rate)

    def normalized(self) -> "CenterMemory":
        if len(self) == 0:
            return self
        return CenterMemory(l2_normalize(self.centers), self.update_rate)


def row_norms(features: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", features, features))


def l2_normalize(features) -> np.ndarray:
    """Scale every row to unit Euclidean norm.

    Raises :class:`ZeroVectorError` naming the first row whose norm is zero.
    """
    x = _as_matrix(features)
    norms = row_norms(x)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroVectorError(int(zero[0]))
    return x / norms[:, None]


def cosine_similarity_matrix(a, b) -> np.ndarray:
    a = _as_matrix(a, "A")
    b = _as_matrix(b, "B")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    sim = l2_normalize(a) @ l2_normalize(b).T
    return np.clip(sim, -1.0, 1.0)


def identity_center(emb: EmbeddingSet, identity: int) -> np.ndarray:
    """Arithmetic mean of every row labeled ``identity`` (shape ``(D,)``)."""
    rows = emb.data[emb.label == identity]
    if rows.shape[0] == 0:
        raise EmptyIdentityError(identity)
    return rows.mean(axis=0)


def memory_init(emb: EmbeddingSet, n_identities: int, update_rate: float = 0.5) -> CenterMemory:
    """Build a memory whose row c is the center of identity c.

    Rows labeled -1 do not contribute. Every identity in ``[0, n_identities)``
    must own at least one row.
    """
    labels = emb.label
    if np.any(labels >= n_identities):
        raise ParameterError(f"label {int(labels.max())} outside [0, {n_identities})")
    keep = labels >= 0
    counts = np.bincount(labels[keep], minlength=n_identities)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise EmptyIdentityError(int(empty[0]))
    sums = np.zeros((n_identities, emb.dim))
    np.add.at(sums, labels[keep], emb.data[keep])
    return CenterMemory(sums / counts[:, None], update_rate)


def memory_update(memory: CenterMemory, fresh_centers, alpha: float | None = None) -> CenterMemory:
    """Exponential moving average: ``alpha * old + (1 - alpha) * fresh``.

    ``alpha`` defaults to the memory's own update rate. No renormalization
    happens here; callers working in cosine space renormalize afterwards.
    """
    alpha = memory.update_rate if alpha is None else alpha
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"update rate must lie in [0, 1], got {alpha}")
    fresh = _as_matrix(fresh_centers, "fresh_centers")
    if fresh.shape != memory.centers.shape:
        raise ShapeError(f"fresh centers {fresh.shape} do not match memory {memory.centers.shape}")
    return CenterMemory(alpha * memory.centers + (1.0 - alpha) * fresh, memory.update_rate)
