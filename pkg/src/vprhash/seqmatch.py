"""Sequence matching: DTW alignment of the query traversal to the database."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .codes import BinaryCodeSet, distance_matrix

DEFAULT_GAMMA = 2.0

# backtrack moves, in tie-break preference order
_DIAG, _DB_ADV, _Q_ADV = 0, 1, 2


@dataclass(frozen=True)
class DTWPath:
    steps: tuple[tuple[int, int], ...]
    total_cost: float


def cost_matrix(query_codes: BinaryCodeSet, db_codes: BinaryCodeSet) -> np.ndarray:
    """``cost[i, j] = hamming(query_i, db_j)`` as float64."""
    return distance_matrix(query_codes, db_codes).astype(np.float64)


def contrast_enhance(c, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Global min-max normalization to [0, 1] followed by ``x ** gamma``.

    A constant matrix maps to all zeros.
    """
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    c = np.asarray(c, dtype=np.float64)
    lo, hi = (float(c.min()), float(c.max())) if c.size else (0.0, 0.0)
    if hi == lo:
        return np.zeros_like(c)
    return ((c - lo) / (hi - lo)) ** gamma


@numba.njit(cache=True)
def _accumulate(c, band):
    rows, cols = c.shape
    acc = np.full((rows, cols), np.inf)
    slope = (cols - 1) / (rows - 1) if rows > 1 else 0.0
    for i in range(rows):
        if band >= 0:
            centre = i * slope
            lo = max(0, int(np.ceil(centre - band)))
            hi = min(cols - 1, int(np.floor(centre + band)))
        else:
            lo, hi = 0, cols - 1
        for j in range(lo, hi + 1):
            if i == 0 and j == 0:
                acc[i, j] = c[0, 0]
                continue
            best = np.inf
            if i > 0 and j > 0:
                best = acc[i - 1, j - 1]
            if j > 0 and acc[i, j - 1] < best:
                best = acc[i, j - 1]
            if i > 0 and acc[i - 1, j] < best:
                best = acc[i - 1, j]
            acc[i, j] = c[i, j] + best
    return acc


@numba.njit(cache=True)
def _backtrack(acc):
    rows, cols = acc.shape
    i, j = rows - 1, cols - 1
    out = np.empty((rows + cols - 1, 2), dtype=np.int64)
    n = 0
    out[n, 0], out[n, 1] = i, j
    n += 1
    while i > 0 or j > 0:
        move = -1
        best = np.inf
        # strict '<' keeps the earlier (preferred) move on ties
        if i > 0 and j > 0 and acc[i - 1, j - 1] < best:
            best, move = acc[i - 1, j - 1], 0
        if j > 0 and acc[i, j - 1] < best:
            best, move = acc[i, j - 1], 1
        if i > 0 and acc[i - 1, j] < best:
            best, move = acc[i - 1, j], 2
        if move == 0:
            i -= 1
            j -= 1
        elif move == 1:
            j -= 1
        else:
            i -= 1
        out[n, 0], out[n, 1] = i, j
        n += 1
    return out[:n][::-1].copy()


def dtw_align(c, band: int | None = None) -> DTWPath:
    """Minimum-cost monotone unit-step path from ``(0, 0)`` to ``(rows-1, cols-1)``.

    The path cost is the sum of every cell it enters. ``band`` restricts
    cells to ``|j - i * (cols-1)/(rows-1)| <= band``.
    """
    c = np.ascontiguousarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] == 0 or c.shape[1] == 0:
        raise ValueError("empty cost matrix")
    if not np.all(np.isfinite(c)) or np.any(c < 0):
        raise ValueError("costs must be finite and non-negative")
    if band is not None:
        rows, cols = c.shape
        # the band must at least admit a staircase between consecutive rows
        band = max(float(band), (cols - 1) / max(rows - 1, 1) + 1.0)
    acc = _accumulate(c, -1.0 if band is None else float(band))
    if not np.isfinite(acc[-1, -1]):
        raise ValueError("band too narrow: no admissible path")
    steps = _backtrack(acc)
    return DTWPath(tuple((int(a), int(b)) for a, b in steps), float(acc[-1, -1]))


def path_cost(c, steps) -> float:
    c = np.asarray(c, dtype=np.float64)
    return float(sum(c[i, j] for i, j in steps))


def align_to_matches(path: DTWPath) -> np.ndarray:
    """Per-query db index: the last path step visiting each query row."""
    rows = path.steps[-1][0] + 1
    out = np.empty(rows, dtype=np.int64)
    for i, j in path.steps:
        out[i] = j
    return out


def align_codes(
    query_codes: BinaryCodeSet,
    db_codes: BinaryCodeSet,
    gamma: float | None = DEFAULT_GAMMA,
    band: int | None = None,
) -> tuple[np.ndarray, DTWPath, np.ndarray]:
    """Cost matrix, optional contrast enhancement, DTW; returns ``(assignment, path, cost)``."""
    cost = cost_matrix(query_codes, db_codes)
    if gamma is not None:
        cost = contrast_enhance(cost, gamma)
    path = dtw_align(cost, band)
    return align_to_matches(path), path, cost
