"""Retrieval metrics: recall@1 within margin, precision-recall, storage size."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .codes import MatchResult, rank
from .dataset import TraversalPair, is_true_positive

DEFAULT_DEPTHS = (1, 2, 5, 10, 20, 50, 100)


@dataclass(frozen=True)
class PRCurve:
    points: tuple[tuple[int, float, float], ...]

    @property
    def depths(self) -> list[int]:
        return [p[0] for p in self.points]

    @property
    def precision(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def recall(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])

    def to_csv(self) -> str:
        lines = ["depth,precision,recall"]
        lines += [f"{d},{p:.6f},{r:.6f}" for d, p, r in self.points]
        return "\n".join(lines) + "\n"


def recall_at_1(pair: TraversalPair, matches: Sequence[MatchResult]) -> float:
    """Percentage of queries whose nearest db frame is within the margin."""
    if not matches:
        raise ValueError("no queries to evaluate")
    hits = 0
    for m in matches:
        if not m.hits:
            raise ValueError(f"query {m.query_idx} has no hits")
        hits += is_true_positive(pair, m.query_idx, m.hits[0][0])
    return 100.0 * hits / len(matches)


def assignment_recall(pair: TraversalPair, query_indices, db_indices) -> float:
    """Percentage of ``(query, db)`` assignments that are true positives."""
    q = np.asarray(query_indices)
    d = np.asarray(db_indices)
    if q.size == 0:
        raise ValueError("no queries to evaluate")
    ok = [is_true_positive(pair, int(a), int(b)) for a, b in zip(q, d)]
    return 100.0 * float(np.mean(ok))


def pr_curve(pair: TraversalPair, matches: Sequence[MatchResult], depths: Sequence[int]) -> PRCurve:
    """Precision ``m/k`` and recall ``m/(2*margin+1)`` averaged over queries.

    ``m`` counts true positives among the top-``k`` hits. The denominator
    stays ``2*margin+1`` even where the window is clipped by a border.
    """
    if not matches:
        raise ValueError("no queries to evaluate")
    depths = sorted(set(int(k) for k in depths))
    if not depths or depths[0] < 1:
        raise ValueError("depths must be >= 1")
    max_depth = depths[-1]
    n_pos = 2 * pair.margin + 1
    tp = np.zeros((len(matches), max_depth), dtype=np.int64)
    for r, m in enumerate(matches):
        if len(m.hits) < max_depth:
            raise ValueError(
                f"insufficient hit depth: query {m.query_idx} has {len(m.hits)} hits, need {max_depth}"
            )
        tp[r] = [is_true_positive(pair, m.query_idx, h[0]) for h in m.hits[:max_depth]]
    # integer totals divided once: the averages are correctly rounded
    total = np.cumsum(tp, axis=1).sum(axis=0)
    q = len(matches)
    points = []
    for k in depths:
        m_k = int(total[k - 1])
        points.append((k, m_k / (k * q), m_k / (n_pos * q)))
    return PRCurve(tuple(points))


def storage_size(n_vectors: int, dim: int, bits_per_dim: int) -> tuple[int, float]:
    """Total bits and mebibytes for ``n_vectors`` descriptors."""
    if min(n_vectors, dim, bits_per_dim) < 1:
        raise ValueError("all arguments must be positive")
    bits = n_vectors * dim * bits_per_dim
    return bits, bits / 8 / 2**20


def raw_matches(
    db: np.ndarray,
    queries: np.ndarray,
    depth: int,
    query_offset: int = 0,
    db_offset: int = 0,
) -> list[MatchResult]:
    """Cosine nearest neighbours on real-valued features.

    Hit scores are reported as cosine distances (``1 - cos``).
    """
    a = np.asarray(db, dtype=np.float64)
    b = np.asarray(queries, dtype=np.float64)
    a = a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-12)
    b = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-12)
    dist = 1.0 - b @ a.T
    out = []
    for r, row in enumerate(dist):
        order = rank(row, depth)
        out.append(MatchResult(query_offset + r, tuple((int(i) + db_offset, float(row[i])) for i in order)))
    return out
