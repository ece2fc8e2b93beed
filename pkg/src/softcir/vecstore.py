"""Id-indexed embedding matrices, similarity kernels, and the SFTEMB1 format.

The store is deliberately dumb: a dense float32 matrix plus an ordered id
list. Inner products double as cosine similarity because rows are
L2-normalized at import by default.

SFTEMB1 layout (little-endian):
    bytes 0-7    magic ASCII "SFTEMB1\\0"
    bytes 8-11   u32 row count
    bytes 12-15  u32 dim
    byte  16     dtype code (0x01 = float32)
    byte  17     flags (bit0 = normalized)
    bytes 18+    row-major float32 payload, count*dim values
Sidecar "<stem>.ids.json": JSON array of strings, position i names row i.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateId,
    FormatError,
    NonFiniteValue,
    ZeroVector,
)

MAGIC = b"SFTEMB1\x00"
DTYPE_FLOAT32 = 0x01
FLAG_NORMALIZED = 0x01

# Tolerance on row norms for stores that claim to be unit-normalized.
NORM_TOL = 1e-4


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Immutable dense embedding store, one float32 row per id."""

    ids: tuple[str, ...]
    data: np.ndarray  # shape (len(ids), dim), float32, read-only
    normalized: bool
    _index: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_index", {i: n for n, i in enumerate(self.ids)})
        self.data.setflags(write=False)

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, id_: str) -> bool:
        return id_ in self._index

    def row(self, id_: str) -> np.ndarray:
        return self.data[self._index[id_]]


@dataclass(frozen=True, eq=False)
class RankedList:
    """Candidates ordered by non-increasing score, ties by ascending id."""

    query_id: str
    ids: tuple[str, ...]
    scores: np.ndarray  # float64, aligned with ids, read-only

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=np.float64)
        object.__setattr__(self, "scores", scores)
        scores.setflags(write=False)
        if len(self.ids) != scores.size:
            raise ValueError("ids and scores must have equal length")
        if len(set(self.ids)) != len(self.ids):
            raise DuplicateId(f"duplicate candidate ids in ranked list {self.query_id!r}")
        if scores.size > 1:
            step = np.diff(scores)
            if np.any(step > 0):
                raise ValueError("scores must be non-increasing")
            for k in np.flatnonzero(step == 0):
                if self.ids[k + 1] < self.ids[k]:
                    raise ValueError("equal scores must be ordered by ascending id")

    def entries(self) -> list[tuple[str, float]]:
        return list(zip(self.ids, self.scores.tolist()))

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RankedList):
            return NotImplemented
        return (
            self.query_id == other.query_id
            and self.ids == other.ids
            and np.array_equal(self.scores, other.scores)
        )


def import_embeddings(rows: Iterable[tuple[str, Sequence[float]]], normalize: bool = True) -> EmbeddingMatrix:
    """Build an EmbeddingMatrix from (id, vector) pairs.

    All vectors must share one width and be finite; ids must be unique.
    With ``normalize`` (the default) every row is rescaled to unit L2 norm,
    which makes downstream inner products plain cosine similarities;
    zero vectors are rejected because they cannot be normalized.
    """
    ids: list[str] = []
    vectors: list[np.ndarray] = []
    seen: set[str] = set()
    dim: int | None = None
    for id_, vec in rows:
        if id_ in seen:
            raise DuplicateId(f"duplicate id {id_!r}")
        seen.add(id_)
        arr = np.asarray(vec, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise DimensionMismatch(f"row {id_!r} is not a non-empty 1-d vector")
        if dim is None:
            dim = arr.size
        elif arr.size != dim:
            raise DimensionMismatch(f"row {id_!r} has width {arr.size}, expected {dim}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue(f"row {id_!r} contains NaN/Inf")
        ids.append(id_)
        vectors.append(arr)
    if not ids:
        raise DimensionMismatch("no rows to import")

    data = np.stack(vectors)
    if normalize:
        norms = np.linalg.norm(data, axis=1)
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise ZeroVector(f"row {ids[int(zero[0])]!r} has zero norm and cannot be normalized")
        data = data / norms[:, None]
    return EmbeddingMatrix(ids=tuple(ids), data=np.ascontiguousarray(data, dtype=np.float32), normalized=normalize)


def similarity_kernel(store: EmbeddingMatrix, query: np.ndarray) -> np.ndarray:
    """Inner products of every row with ``query``, row-aligned float32 array.

    This is the hot path; it reads the whole matrix once per call.
    """
    q = np.asarray(query, dtype=np.float32)
    if q.ndim != 1 or q.size != store.dim:
        raise DimensionMismatch(f"query has width {q.size}, store dim is {store.dim}")
    return store.data @ q


def similarities(store: EmbeddingMatrix, query: np.ndarray) -> dict[str, float]:
    """Map id -> inner product with ``query``.

    With both sides unit-norm the values are cosine similarities and stay
    within [-1 - 1e-5, 1 + 1e-5] (float32 rounding slack).
    """
    sims = similarity_kernel(store, query)
    return dict(zip(store.ids, sims.tolist()))


def top_k(scores: dict[str, float], k: int, query_id: str = "") -> RankedList:
    """Top ``min(k, len(scores))`` entries, score descending, ties by ascending id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    return RankedList(
        query_id=query_id,
        ids=tuple(id_ for id_, _ in ordered),
        scores=np.array([s for _, s in ordered], dtype=np.float64),
    )


def _ids_sidecar(path: Path) -> Path:
    return path.with_name(path.stem + ".ids.json")


def write_store(path: str | Path, store: EmbeddingMatrix) -> None:
    """Write ``store`` as SFTEMB1 plus its ids sidecar. Round-trips bit-exactly."""
    path = Path(path)
    header = MAGIC + struct.pack(
        "<IIBB",
        len(store),
        store.dim,
        DTYPE_FLOAT32,
        FLAG_NORMALIZED if store.normalized else 0,
    )
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + store.data.astype("<f4", copy=False).tobytes(order="C"))
    tmp.replace(path)

    sidecar = _ids_sidecar(path)
    tmp = sidecar.with_name(sidecar.name + ".tmp")
    tmp.write_text(json.dumps(list(store.ids)), encoding="utf-8")
    tmp.replace(sidecar)


def read_store(path: str | Path) -> EmbeddingMatrix:
    """Read an SFTEMB1 file and its ids sidecar back into an EmbeddingMatrix.

    Raises FormatError on a bad magic, dtype mismatch, truncated or oversized
    payload, non-finite entries, or a sidecar that disagrees with the header.
    Emits a warning when the normalized flag is set but some row norm drifts
    beyond 1e-4 from 1.0.
    """
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 18:
        raise FormatError(f"{path}: shorter than the fixed header")
    if blob[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:8]!r}")
    count, dim, dtype_code, flags = struct.unpack_from("<IIBB", blob, 8)
    if dtype_code != DTYPE_FLOAT32:
        raise FormatError(f"{path}: unsupported dtype code {dtype_code:#04x}")
    if dim < 1:
        raise FormatError(f"{path}: dim must be >= 1, got {dim}")
    expected = 18 + count * dim * 4
    if len(blob) != expected:
        raise FormatError(f"{path}: payload is {len(blob) - 18} bytes, header implies {expected - 18}")

    data = np.frombuffer(blob, dtype="<f4", offset=18).reshape(count, dim).copy()
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: payload contains NaN/Inf")

    sidecar = _ids_sidecar(path)
    try:
        ids = json.loads(sidecar.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError(f"{path}: missing ids sidecar {sidecar.name}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{sidecar}: not valid JSON: {exc}") from None
    if not isinstance(ids, list) or not all(isinstance(i, str) for i in ids):
        raise FormatError(f"{sidecar}: must be a JSON array of strings")
    if len(ids) != count:
        raise FormatError(f"{sidecar}: {len(ids)} ids for {count} rows")
    if len(set(ids)) != len(ids):
        raise FormatError(f"{sidecar}: duplicate ids")

    normalized = bool(flags & FLAG_NORMALIZED)
    if normalized and count:
        norms = np.linalg.norm(data.astype(np.float64), axis=1)
        drift = np.abs(norms - 1.0).max()
        if drift > NORM_TOL:
            warnings.warn(
                f"{path}: normalized flag set but max row-norm drift is {drift:.2e}",
                stacklevel=2,
            )
    return EmbeddingMatrix(ids=tuple(ids), data=data, normalized=normalized)
