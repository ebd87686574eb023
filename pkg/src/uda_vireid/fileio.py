"""On-disk formats.

Embedding file (``.emb``), all little-endian::

    offset 0   4 bytes  magic b"EMB1"
    offset 4   uint32   format version (1)
    offset 8   uint32   n (rows)
    offset 12  uint32   d (columns)
    offset 16  n*d float32, row-major

Each embedding file has a tab-separated metadata sidecar (same stem,
``.tsv``) with header ``sample_id domain modality label camera_id`` and one
line per row. Center memories are stored as bare embedding files.

All writers go through a temporary file and ``os.replace`` so readers never
observe a half-written file.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import DOMAINS, MODALITIES, CenterMemory, EmbeddingSet
from .errors import (
    BadMagicError,
    MetadataError,
    NonFiniteValueError,
    RowCountMismatchError,
    TrailingDataError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)

MAGIC = b"EMB1"
VERSION = 1
HEADER = struct.Struct("<4sIII")
META_COLUMNS = ("sample_id", "domain", "modality", "label", "camera_id")


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def metadata_path(path) -> Path:
    return Path(path).with_suffix(".tsv")


def encode_matrix(matrix) -> bytes:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("cannot store non-finite values")
    n, d = m.shape
    return HEADER.pack(MAGIC, VERSION, n, d) + np.ascontiguousarray(m, dtype="<f4").tobytes()


def decode_matrix(raw: bytes) -> np.ndarray:
    """Parse an embedding file image into an ``n x d`` float32 array."""
    if len(raw) < len(MAGIC) or raw[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}", 0)
    if len(raw) < HEADER.size:
        raise TruncatedPayloadError(f"header needs {HEADER.size} bytes, file has {len(raw)}", len(raw))
    _, version, n, d = HEADER.unpack_from(raw)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}", 4)
    expected = HEADER.size + 4 * n * d
    if len(raw) < expected:
        raise TruncatedPayloadError(f"payload of {n}x{d} needs {expected} bytes, file has {len(raw)}", len(raw))
    if len(raw) > expected:
        raise TrailingDataError(f"{len(raw) - expected} unexpected bytes after payload", expected)
    values = np.frombuffer(raw, dtype="<f4", count=n * d, offset=HEADER.size).reshape(n, d)
    bad = np.flatnonzero(~np.isfinite(values.ravel()))
    if bad.size:
        raise NonFiniteValueError("non-finite value in payload", HEADER.size + 4 * int(bad[0]))
    return values.astype(np.float32)


def write_matrix(matrix, path) -> None:
    atomic_write_bytes(path, encode_matrix(matrix))


def read_matrix(path) -> np.ndarray:
    return decode_matrix(Path(path).read_bytes())


def write_memory(memory: CenterMemory, path) -> None:
    write_matrix(memory.centers, path)


def read_memory(path, update_rate: float = 0.5) -> CenterMemory:
    return CenterMemory(read_matrix(path).astype(np.float64), update_rate)


def format_metadata(emb: EmbeddingSet) -> str:
    lines = ["\t".join(META_COLUMNS)]
    for sid, dom, mod, lab, cam in zip(emb.sample_id, emb.domain, emb.modality, emb.label, emb.camera):
        lines.append(f"{sid}\t{dom}\t{mod}\t{int(lab)}\t{int(cam)}")
    return "\n".join(lines) + "\n"


def parse_metadata(text: str) -> dict[str, np.ndarray]:
    lines = text.splitlines()
    if not lines or tuple(lines[0].split("\t")) != META_COLUMNS:
        raise MetadataError(f"header must be {' '.join(META_COLUMNS)!r} (tab-separated)", 1)
    cols: dict[str, list] = {c: [] for c in META_COLUMNS}
    seen: set[str] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != len(META_COLUMNS):
            raise MetadataError(f"expected {len(META_COLUMNS)} fields, got {len(parts)}", lineno)
        sid, dom, mod, lab, cam = parts
        if sid in seen:
            raise MetadataError(f"duplicate sample_id {sid!r}", lineno)
        seen.add(sid)
        if dom not in DOMAINS:
            raise MetadataError(f"unknown domain {dom!r}", lineno)
        if mod not in MODALITIES:
            raise MetadataError(f"unknown modality {mod!r}", lineno)
        try:
            label, camera = int(lab), int(cam)
        except ValueError:
            raise MetadataError("label and camera_id must be integers", lineno) from None
        if label < -1:
            raise MetadataError(f"label {label} below -1", lineno)
        for key, value in zip(META_COLUMNS, (sid, dom, mod, label, camera)):
            cols[key].append(value)
    return {k: np.asarray(v) for k, v in cols.items()}


def write_embeddings(emb: EmbeddingSet, path) -> None:
    """Write ``path`` (binary features) and its ``.tsv`` metadata sidecar."""
    write_matrix(emb.data, path)
    atomic_write_text(metadata_path(path), format_metadata(emb))


def read_embeddings(path, meta_path=None) -> EmbeddingSet:
    values = read_matrix(path)
    meta_path = metadata_path(path) if meta_path is None else Path(meta_path)
    if not meta_path.exists():
        raise MetadataError(f"missing metadata file {meta_path}")
    meta = parse_metadata(meta_path.read_text(encoding="utf-8"))
    n_meta = meta["sample_id"].size
    if n_meta != values.shape[0]:
        raise RowCountMismatchError(f"{meta_path} has {n_meta} rows, {path} has {values.shape[0]}")
    return EmbeddingSet(
        data=values.astype(np.float64),
        domain=meta["domain"] if n_meta else np.empty(0, str),
        modality=meta["modality"] if n_meta else np.empty(0, str),
        label=meta["label"] if n_meta else np.empty(0, np.int64),
        camera=meta["camera_id"] if n_meta else np.empty(0, np.int64),
        sample_id=meta["sample_id"] if n_meta else np.empty(0, str),
    )


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return "none"
    return str(value)


def write_table(path, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    lines = ["\t".join(header)]
    lines += ["\t".join(format_value(v) for v in row) for row in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_table(path) -> tuple[list[str], list[list[str]]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise MetadataError(f"{path} is empty")
    return lines[0].split("\t"), [line.split("\t") for line in lines[1:] if line]


def write_labels(path, sample_id, modality, label) -> None:
    write_table(path, ("sample_id", "modality", "label"), zip(sample_id, modality, (int(x) for x in label)))


def read_labels(path) -> dict[str, int]:
    header, rows = read_table(path)
    if header != ["sample_id", "modality", "label"]:
        raise MetadataError(f"{path}: unexpected label header {header}", 1)
    return {r[0]: int(r[2]) for r in rows}
