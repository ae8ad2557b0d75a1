"""Exact inner-product top-k search over dense vectors, with persistence.

Flat search only: every query is scored against every entry, so results
are exact and the full scan doubles as its own oracle. Ties are broken by
insertion order, making search fully deterministic.

On-disk format: magic ``OMGMIDX`` + one version byte (``1``), then dims
and entry count as little-endian uint32, then per entry a uint32 id
length, the UTF-8 id bytes, and ``dims`` little-endian float64 values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from omgm import OmgmError

_MAGIC_PREFIX = b"OMGMIDX"
_VERSION = b"1"


class IndexBuildError(OmgmError):
    """Inconsistent entries passed to the index builder."""


class IndexLoadError(OmgmError):
    """Corrupt or incompatible index file."""


@dataclass(frozen=True)
class SearchHit:
    record_id: str
    score: float


class VectorIndex:
    """Immutable flat index; safe for unlimited concurrent searches."""

    def __init__(self, ids: Sequence[str], matrix: np.ndarray,
                 metadata: Optional[dict] = None):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise IndexBuildError("matrix shape does not match id count")
        self._ids = list(ids)
        self._matrix = matrix
        self.metadata = metadata or {}

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def dims(self) -> int:
        return self._matrix.shape[1]

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def search(self, query: np.ndarray, k: int) -> list[SearchHit]:
        """Exact top-min(k, n) entries by inner product."""
        if k < 1:
            raise ValueError("k must be >= 1")
        query = np.asarray(query, dtype=np.float64).ravel()
        if query.shape[0] != self.dims:
            raise IndexBuildError(
                f"query dims {query.shape[0]} != index dims {self.dims}"
            )
        scores = self._matrix @ query
        # stable sort on the negated scores keeps insertion order for ties
        order = np.argsort(-scores, kind="stable")[: min(k, len(self._ids))]
        return [SearchHit(self._ids[i], float(scores[i])) for i in order]

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_MAGIC_PREFIX + _VERSION)
            fh.write(struct.pack("<II", self.dims, len(self._ids)))
            for rid, row in zip(self._ids, self._matrix):
                id_bytes = rid.encode("utf-8")
                fh.write(struct.pack("<I", len(id_bytes)))
                fh.write(id_bytes)
                fh.write(row.astype("<f8").tobytes())


def build_index(entries: Sequence[tuple[str, np.ndarray]],
                metadata: Optional[dict] = None) -> VectorIndex:
    """Build an index over exactly the given (id, vector) entries."""
    if not entries:
        raise IndexBuildError("cannot build an index from no entries")
    ids = [rid for rid, _ in entries]
    if len(set(ids)) != len(ids):
        dupes = sorted({rid for rid in ids if ids.count(rid) > 1})
        raise IndexBuildError(f"duplicate record ids: {dupes}")
    vectors = [np.asarray(v, dtype=np.float64).ravel() for _, v in entries]
    dims = {v.shape[0] for v in vectors}
    if len(dims) != 1:
        raise IndexBuildError(f"mixed vector dims: {sorted(dims)}")
    return VectorIndex(ids, np.stack(vectors), metadata=metadata)


def load_index(path) -> VectorIndex:
    """Load a persisted index; scores reproduce bit-exactly after a round trip."""
    with open(path, "rb") as fh:
        data = fh.read()
    header_len = len(_MAGIC_PREFIX) + 1
    if len(data) < header_len + 8:
        raise IndexLoadError("truncated index file (no header)")
    if data[: len(_MAGIC_PREFIX)] != _MAGIC_PREFIX:
        raise IndexLoadError("not an index file (bad magic)")
    version = data[len(_MAGIC_PREFIX) : header_len]
    if version != _VERSION:
        raise IndexLoadError(
            f"unsupported index version {version!r} (expected {_VERSION!r})"
        )
    dims, count = struct.unpack_from("<II", data, header_len)
    offset = header_len + 8
    ids: list[str] = []
    rows: list[np.ndarray] = []
    row_bytes = dims * 8
    for _ in range(count):
        if offset + 4 > len(data):
            raise IndexLoadError("truncated index file (entry header)")
        (id_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if offset + id_len + row_bytes > len(data):
            raise IndexLoadError("truncated index file (entry payload)")
        ids.append(data[offset : offset + id_len].decode("utf-8"))
        offset += id_len
        rows.append(np.frombuffer(data, dtype="<f8", count=dims, offset=offset).copy())
        offset += row_bytes
    if offset != len(data):
        raise IndexLoadError("trailing bytes after final entry")
    return VectorIndex(ids, np.stack(rows) if rows else np.empty((0, dims)))
