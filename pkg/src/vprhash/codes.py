"""Bit-packed binary codes, Hamming distance and exhaustive retrieval."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_QUERY_BLOCK = 256


def words_per_code(k: int) -> int:
    return (k + 63) // 64


def _tail_mask(k: int) -> np.uint64:
    rem = k % 64
    return np.uint64(0xFFFFFFFFFFFFFFFF) if rem == 0 else np.uint64((1 << rem) - 1)


@dataclass(frozen=True, eq=False)
class BinaryCodeSet:
    """``n`` codes of ``k`` bits; bit ``j`` lives in word ``j // 64`` at position ``j % 64``."""

    words: np.ndarray
    k: int

    def __post_init__(self) -> None:
        w = np.array(self.words, dtype=np.uint64, order="C", copy=True)
        if self.k < 1:
            raise ValueError("code length k must be >= 1")
        if w.ndim != 2 or w.shape[1] != words_per_code(self.k):
            raise ValueError(f"expected (n, {words_per_code(self.k)}) words for k={self.k}, got {w.shape}")
        if w.shape[0] and np.any(w[:, -1] & ~_tail_mask(self.k)):
            raise ValueError("unused tail bits must be zero")
        w.setflags(write=False)
        object.__setattr__(self, "words", w)

    @property
    def n(self) -> int:
        return self.words.shape[0]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, idx) -> np.ndarray:
        return self.words[idx]

    def subset(self, start: int, stop: int) -> "BinaryCodeSet":
        return BinaryCodeSet(self.words[start:stop], self.k)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryCodeSet):
            return NotImplemented
        return self.k == other.k and np.array_equal(self.words, other.words)


def pack(bits) -> BinaryCodeSet:
    """Pack an ``n x k`` 0/1 matrix into 64-bit words (little-bit-first)."""
    b = np.asarray(bits)
    if b.ndim != 2:
        raise ValueError(f"bits must be 2-D, got shape {b.shape}")
    if b.size and not np.all((b == 0) | (b == 1)):
        raise ValueError("bits must be 0 or 1")
    n, k = b.shape
    w = words_per_code(k)
    padded = np.zeros((n, w * 64), dtype=np.uint8)
    padded[:, :k] = b
    # little bit order within each byte, little-endian bytes within each word
    packed = np.packbits(padded, axis=1, bitorder="little")
    words = packed.view("<u8").astype(np.uint64)
    return BinaryCodeSet(words.reshape(n, w), k)


def unpack(codes: BinaryCodeSet) -> np.ndarray:
    raw = np.ascontiguousarray(codes.words.astype("<u8")).view(np.uint8)
    bits = np.unpackbits(raw, axis=1, bitorder="little")
    return bits[:, : codes.k]


def hamming(a, b) -> int:
    """Number of differing bits between two packed code rows."""
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    if a.shape != b.shape:
        raise ValueError(f"code length mismatch: {a.shape} vs {b.shape}")
    return int(np.bitwise_count(a ^ b).sum())


def distances(db: BinaryCodeSet, query) -> np.ndarray:
    """Hamming distance from one packed query row to every db code."""
    q = np.asarray(query, dtype=np.uint64)
    if q.shape != (db.words.shape[1],):
        raise ValueError(f"query has {q.shape} words, db codes have {db.words.shape[1]}")
    return np.bitwise_count(db.words ^ q).sum(axis=1, dtype=np.int64)


def distance_matrix(queries: BinaryCodeSet, db: BinaryCodeSet) -> np.ndarray:
    """``queries.n x db.n`` matrix of Hamming distances."""
    if queries.k != db.k:
        raise ValueError(f"code length mismatch: {queries.k} vs {db.k}")
    out = np.empty((queries.n, db.n), dtype=np.int64)
    for s in range(0, queries.n, _QUERY_BLOCK):
        q = queries.words[s : s + _QUERY_BLOCK, None, :]
        out[s : s + _QUERY_BLOCK] = np.bitwise_count(q ^ db.words[None, :, :]).sum(axis=2)
    return out


@dataclass(frozen=True)
class MatchResult:
    """Ranked hits for one query: ``(db_idx, hamming)`` ascending by distance, then index."""

    query_idx: int
    hits: tuple[tuple[int, int], ...]

    @property
    def db_indices(self) -> list[int]:
        return [h[0] for h in self.hits]


def rank(dist: np.ndarray, depth: int) -> np.ndarray:
    """Indices of the ``depth`` smallest entries, ties by lower index."""
    depth = min(depth, dist.shape[0])
    if depth < dist.shape[0] // 4 and np.issubdtype(dist.dtype, np.integer):
        # partition on a combined key keeps (distance, index) order exact
        key = dist.astype(np.int64) * dist.shape[0] + np.arange(dist.shape[0])
        part = np.argpartition(key, depth - 1)[:depth]
        return part[np.argsort(key[part])]
    return np.argsort(dist, kind="stable")[:depth]


def top_k(db: BinaryCodeSet, query, depth: int, query_idx: int = 0, db_offset: int = 0) -> MatchResult:
    """Exhaustive nearest neighbours of ``query`` among ``db``.

    ``db_offset`` is added to reported db indices so that hits can carry
    global traversal indices.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if db.n < 1:
        raise ValueError("empty database")
    d = distances(db, query)
    order = rank(d, depth)
    return MatchResult(query_idx, tuple((int(i) + db_offset, int(d[i])) for i in order))


def search(
    db: BinaryCodeSet,
    queries: BinaryCodeSet,
    depth: int,
    query_offset: int = 0,
    db_offset: int = 0,
) -> list[MatchResult]:
    """:func:`top_k` for every query row."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if db.n < 1:
        raise ValueError("empty database")
    results = []
    for s in range(0, queries.n, _QUERY_BLOCK):
        block = distance_matrix(queries.subset(s, s + _QUERY_BLOCK), db)
        for r, d in enumerate(block):
            order = rank(d, depth)
            hits = tuple((int(i) + db_offset, int(d[i])) for i in order)
            results.append(MatchResult(query_offset + s + r, hits))
    return results
