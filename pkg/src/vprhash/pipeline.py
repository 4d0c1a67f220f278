"""End-to-end helpers shared by the CLI and the experiment scripts."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import hashlearn
from .codes import BinaryCodeSet, search
from .dataset import TraversalPair, build_similarity_labels
from .evaluation import PRCurve, assignment_recall, pr_curve, recall_at_1
from .featio import FeatureMatrix
from .seqmatch import DEFAULT_GAMMA, align_codes


def derive_seed(seed: int, stage: str) -> int:
    """Fixed split of the master seed into per-stage seeds."""
    key = int.from_bytes(stage.encode("utf-8"), "little") % (2**32)
    return int(np.random.SeedSequence([seed % 2**64, key]).generate_state(1, dtype=np.uint64)[0])


def training_matrix(pair: TraversalPair, db: FeatureMatrix, query: FeatureMatrix) -> np.ndarray:
    """Train-range rows, db first then query (the label row order)."""
    if db.d != query.d:
        raise ValueError(f"feature dimension mismatch: db d={db.d}, query d={query.d}")
    return np.vstack([db.rows(pair.train_db), query.rows(pair.train_query)])


def train(
    pair: TraversalPair,
    db: FeatureMatrix,
    query: FeatureMatrix,
    method: str,
    bits: int,
    reg: float | None = None,
    iterations: int = hashlearn.ITQ_ITERATIONS,
    seed: int = 0,
) -> hashlearn.HashModel:
    if db.d != query.d:
        raise ValueError(f"feature dimension mismatch: db d={db.d}, query d={query.d}")
    if method == hashlearn.LSH:
        return hashlearn.fit_lsh(db.d, bits, derive_seed(seed, "lsh"))
    if method == hashlearn.CCAITQ:
        X = training_matrix(pair, db, query)
        Y = build_similarity_labels(pair)
        return hashlearn.fit_ccaitq(X, Y, bits, reg, iterations, derive_seed(seed, "itq"))
    raise ValueError(f"unknown method {method!r}")


def encode_test_ranges(model, pair: TraversalPair, db: FeatureMatrix, query: FeatureMatrix):
    return (
        hashlearn.encode(model, db.rows(pair.test_db)),
        hashlearn.encode(model, query.rows(pair.test_query)),
    )


@dataclass
class Report:
    recall_at_1: float
    pr: PRCurve | None = None
    recall_at_1_dtw: float | None = None
    assignment: np.ndarray | None = None


def evaluate_codes(
    pair: TraversalPair,
    db_codes: BinaryCodeSet,
    query_codes: BinaryCodeSet,
    depths: Sequence[int] | None = None,
    dtw: bool = False,
    gamma: float | None = DEFAULT_GAMMA,
    band: int | None = None,
) -> Report:
    """Score test-range codes (row 0 = first frame of each test range)."""
    n_db = pair.test_db[1] - pair.test_db[0]
    n_q = pair.test_query[1] - pair.test_query[0]
    if n_db == 0 or n_q == 0:
        raise ValueError("empty test range")
    if db_codes.n != n_db or query_codes.n != n_q:
        raise ValueError(
            f"code counts ({db_codes.n} db, {query_codes.n} query) do not match test ranges ({n_db}, {n_q})"
        )
    depths = sorted({min(int(k), n_db) for k in (depths or [1])} | {1})
    matches = search(db_codes, query_codes, depths[-1], pair.test_query[0], pair.test_db[0])
    report = Report(recall_at_1(pair, matches), pr_curve(pair, matches, depths))
    if dtw:
        assignment, _, _ = align_codes(query_codes, db_codes, gamma, band)
        report.assignment = assignment + pair.test_db[0]
        report.recall_at_1_dtw = assignment_recall(
            pair, np.arange(*pair.test_query), report.assignment
        )
    return report
