"""Paired traversals, ground-truth frame matching and supervision labels.

All frame indices in this module are *global* indices into their traversal
(0 = first frame of the traversal), never offsets into a split.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import yaml

Range = tuple[int, int]

MANIFEST_KEYS = (
    "db_frames",
    "query_frames",
    "fm",
    "margin",
    "train_db",
    "train_query",
    "test_db",
    "test_query",
)


class ManifestError(ValueError):
    """Raised for malformed or inconsistent experiment manifests."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _check_range(name: str, r: Sequence[int], n: int) -> Range:
    if len(r) != 2:
        raise ManifestError(f"{name}: expected [start, stop], got {r!r}")
    start, stop = int(r[0]), int(r[1])
    if not 0 <= start <= stop <= n:
        raise ManifestError(f"{name}: range [{start}, {stop}) outside [0, {n})")
    return start, stop


def _overlaps(a: Range, b: Range) -> bool:
    return max(a[0], b[0]) < min(a[1], b[1])


@dataclass(frozen=True)
class TraversalPair:
    """Database and query traversals with ground truth ``fm[q] -> db``."""

    db_frames: tuple
    query_frames: tuple
    fm: np.ndarray
    margin: int
    train_db: Range
    train_query: Range
    test_db: Range
    test_query: Range
    fps: float = 0.0

    def __post_init__(self) -> None:
        fm = np.asarray(self.fm, dtype=np.int64)
        if fm.ndim != 1 or fm.shape[0] != self.n_query:
            raise ManifestError(
                f"fm must define one db index per query frame "
                f"({self.n_query}), got shape {fm.shape}"
            )
        if fm.size and (fm.min() < 0 or fm.max() >= self.n_db):
            bad = int(np.flatnonzero((fm < 0) | (fm >= self.n_db))[0])
            raise ManifestError(
                f"fm out of bounds: fm({bad})={int(fm[bad])} but only {self.n_db} db frames"
            )
        object.__setattr__(self, "fm", _frozen(fm))
        if int(self.margin) < 0:
            raise ManifestError(f"margin must be >= 0, got {self.margin}")
        object.__setattr__(self, "margin", int(self.margin))
        for name, n in (
            ("train_db", self.n_db),
            ("test_db", self.n_db),
            ("train_query", self.n_query),
            ("test_query", self.n_query),
        ):
            object.__setattr__(self, name, _check_range(name, getattr(self, name), n))
        if _overlaps(self.train_db, self.test_db):
            raise ManifestError(f"overlapping train/test ranges in db traversal: {self.train_db} vs {self.test_db}")
        if _overlaps(self.train_query, self.test_query):
            raise ManifestError(
                f"overlapping train/test ranges in query traversal: {self.train_query} vs {self.test_query}"
            )

    @property
    def n_db(self) -> int:
        return len(self.db_frames)

    @property
    def n_query(self) -> int:
        return len(self.query_frames)

    @property
    def n_train(self) -> int:
        return (self.train_db[1] - self.train_db[0]) + (self.train_query[1] - self.train_query[0])

    @classmethod
    def synchronized(
        cls,
        n: int,
        margin: int,
        train: Range,
        test: Range,
        fps: float = 0.0,
    ) -> "TraversalPair":
        """Pair of equally long traversals with ``fm(i) = i`` and shared splits."""
        frames = tuple(range(n))
        return cls(frames, frames, np.arange(n), margin, train, train, test, test, fps)


def _frames(value: Any, key: str) -> tuple:
    if isinstance(value, bool):
        raise ManifestError(f"{key}: expected a frame count or list")
    if isinstance(value, int):
        if value < 0:
            raise ManifestError(f"{key}: negative frame count")
        return tuple(range(value))
    if isinstance(value, (list, tuple)):
        return tuple(value)
    raise ManifestError(f"{key}: expected a frame count or list, got {type(value).__name__}")


def _fm(value: Any, n_query: int, base_dir: str | None) -> np.ndarray:
    if isinstance(value, str):
        if value == "identity":
            return np.arange(n_query)
        path = value if os.path.isabs(value) or base_dir is None else os.path.join(base_dir, value)
        try:
            return np.loadtxt(path, dtype=np.int64, ndmin=1)
        except (OSError, ValueError) as exc:
            raise ManifestError(f"fm: cannot read {path}: {exc}") from exc
    if isinstance(value, (list, tuple)):
        try:
            return np.asarray([int(v) for v in value], dtype=np.int64)
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"fm: non-integer entry: {exc}") from exc
    raise ManifestError(f"fm: expected 'identity', a list or a file path, got {value!r}")


def pair_from_mapping(doc: Mapping[str, Any], base_dir: str | None = None) -> TraversalPair:
    """Validate a parsed manifest mapping and build the pair."""
    if not isinstance(doc, Mapping):
        raise ManifestError("manifest must be a key/value mapping")
    missing = [k for k in MANIFEST_KEYS if k not in doc]
    if missing:
        raise ManifestError(f"missing keys: {', '.join(missing)}")
    db = _frames(doc["db_frames"], "db_frames")
    query = _frames(doc["query_frames"], "query_frames")
    fm = _fm(doc["fm"], len(query), base_dir)
    try:
        margin = int(doc["margin"])
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"margin: {exc}") from exc
    return TraversalPair(
        db_frames=db,
        query_frames=query,
        fm=fm,
        margin=margin,
        train_db=tuple(doc["train_db"]),
        train_query=tuple(doc["train_query"]),
        test_db=tuple(doc["test_db"]),
        test_query=tuple(doc["test_query"]),
        fps=float(doc.get("fps", 0.0)),
    )


def load_traversal_pair(manifest: str | os.PathLike | Mapping[str, Any]) -> TraversalPair:
    """Load a YAML manifest file (or an already-parsed mapping).

    Relative ``fm`` file paths resolve against the manifest's directory.
    """
    if isinstance(manifest, Mapping):
        return pair_from_mapping(manifest)
    path = os.fspath(manifest)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ManifestError(f"{path}: not a valid manifest: {exc}") from exc
    return pair_from_mapping(doc or {}, base_dir=os.path.dirname(os.path.abspath(path)))


def dump_manifest(pair: TraversalPair, path: str | os.PathLike) -> None:
    """Write ``pair`` as a manifest; synchronized pairs use ``fm: identity``."""
    identity = pair.n_db == pair.n_query and np.array_equal(pair.fm, np.arange(pair.n_query))
    doc = {
        "db_frames": pair.n_db if pair.db_frames == tuple(range(pair.n_db)) else list(pair.db_frames),
        "query_frames": pair.n_query
        if pair.query_frames == tuple(range(pair.n_query))
        else list(pair.query_frames),
        "fm": "identity" if identity else [int(v) for v in pair.fm],
        "margin": pair.margin,
        "train_db": list(pair.train_db),
        "train_query": list(pair.train_query),
        "test_db": list(pair.test_db),
        "test_query": list(pair.test_query),
        "fps": pair.fps,
    }
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False, default_flow_style=None)


def _in_range(idx: int, r: Range) -> bool:
    return r[0] <= idx < r[1]


def is_true_positive(pair: TraversalPair, query_idx: int, retrieved_db_idx: int) -> bool:
    """True iff the retrieved db frame is within ``margin`` of ``fm(query_idx)``."""
    if not _in_range(query_idx, pair.test_query):
        raise IndexError(f"query index {query_idx} outside test range {pair.test_query}")
    if not _in_range(retrieved_db_idx, pair.test_db):
        raise IndexError(f"db index {retrieved_db_idx} outside test range {pair.test_db}")
    return abs(int(retrieved_db_idx) - int(pair.fm[query_idx])) <= pair.margin


@dataclass(frozen=True)
class SimilarityLabels:
    """Sparse binary label matrix over the training images of both traversals.

    Row/column order: train-range db images first, then train-range query
    images, each in traversal order.
    """

    matrix: sp.csr_matrix
    db_index: np.ndarray = field(repr=False)
    query_index: np.ndarray = field(repr=False)

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def entries(self) -> set[tuple[int, int]]:
        coo = self.matrix.tocoo()
        return set(zip(coo.row.tolist(), coo.col.tolist()))


def _window(center: int, margin: int, r: Range) -> range:
    return range(max(center - margin, r[0]), min(center + margin, r[1] - 1) + 1)


def build_similarity_labels(pair: TraversalPair) -> SimilarityLabels:
    """One label per training image; 1s mark same-place neighbours.

    A query image ``i`` is similar to query images ``i +- margin`` and to db
    images ``fm(i) +- margin``. A db image ``j`` is similar to db images
    ``j +- margin`` and to query images ``p +- margin`` for every ``p`` with
    ``fm(p) = j``. Windows are clipped to the train ranges.
    """
    (d0, d1), (q0, q1) = pair.train_db, pair.train_query
    n_db, n_q = d1 - d0, q1 - q0
    if n_db == 0 or n_q == 0:
        raise ManifestError("build_similarity_labels needs non-empty train ranges in both traversals")
    m = pair.margin

    def db_col(j: int) -> int:
        return j - d0

    def q_col(i: int) -> int:
        return n_db + (i - q0)

    preimages: dict[int, list[int]] = {}
    for p, j in enumerate(pair.fm.tolist()):
        preimages.setdefault(j, []).append(p)

    rows: list[int] = []
    cols: list[int] = []
    for j in range(d0, d1):
        r = db_col(j)
        own = {db_col(c) for c in _window(j, m, pair.train_db)}
        other: set[int] = set()
        for p in preimages.get(j, ()):
            other.update(q_col(c) for c in _window(p, m, pair.train_query))
        for c in sorted(own | other):
            rows.append(r)
            cols.append(c)
    for i in range(q0, q1):
        r = q_col(i)
        own = {q_col(c) for c in _window(i, m, pair.train_query)}
        other = {db_col(c) for c in _window(int(pair.fm[i]), m, pair.train_db)}
        for c in sorted(own | other):
            rows.append(r)
            cols.append(c)

    n = n_db + n_q
    data = np.ones(len(rows), dtype=np.float64)
    mat = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    return SimilarityLabels(mat, _frozen(np.arange(d0, d1)), _frozen(np.arange(q0, q1)))


def _smooth_route(rng: np.random.Generator, n: int, dim: int, rho: float) -> np.ndarray:
    z = np.empty((n, dim))
    z[0] = rng.standard_normal(dim)
    innov = np.sqrt(1.0 - rho * rho)
    for t in range(1, n):
        z[t] = rho * z[t - 1] + innov * rng.standard_normal(dim)
    return z


def _latent_basis(dim: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[1])
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q, rng.standard_normal((dim, dim))


def season_transform(dim: int, appearance_shift: float, seed: int, season_fraction: float = 0.25) -> np.ndarray:
    """Fixed linear appearance change applied to the second traversal.

    The highest-variance latent directions (``season_fraction`` of them) are
    scrambled by a random linear map scaled by ``appearance_shift``; the
    remaining directions pass through unchanged. ``appearance_shift = 0``
    gives the identity.
    """
    q, g = _latent_basis(dim, seed)
    r = max(1, int(dim * season_fraction))
    basis = q[:, :r]
    mix = g[:r, :r] / np.sqrt(r)
    return np.eye(dim) + appearance_shift * basis @ mix @ basis.T


def synth_traversals(
    n_places: int,
    dim: int,
    appearance_shift: float,
    noise: float,
    seed: int,
    margin: int = 2,
    train_fraction: float = 0.6,
    smoothness: float = 0.6,
    spectrum_decay: float = 1.0,
):
    """Desk-scale stand-in for a synchronized two-season route.

    Places follow a smooth random walk in a latent space whose variance
    decays as ``1 / (i + 1) ** spectrum_decay`` along a random basis, so a
    few directions dominate raw distances (as in real image descriptors).
    Traversal A sees ``latent + noise``; traversal B sees
    ``T @ latent + noise`` where ``T`` (:func:`season_transform`) scrambles
    the dominant directions. Returns ``(db, query, pair)`` as
    ``FeatureMatrix`` objects plus a synchronized :class:`TraversalPair`
    (A is the database).
    """
    from .featio import FeatureMatrix

    if n_places < 4:
        raise ValueError("n_places must be >= 4")
    if dim < 2:
        raise ValueError("dim must be >= 2")
    route_ss, _, noise_ss = np.random.SeedSequence(seed).spawn(3)
    route = _smooth_route(np.random.default_rng(route_ss), n_places, dim, smoothness)
    scale = (1.0 + np.arange(dim)) ** (-spectrum_decay / 2)
    scale /= np.sqrt(np.mean(scale**2))
    q, _ = _latent_basis(dim, seed)
    latent = (route * scale) @ q.T
    transform = season_transform(dim, appearance_shift, seed)
    rng = np.random.default_rng(noise_ss)
    a = latent + noise * rng.standard_normal((n_places, dim))
    b = latent @ transform.T + noise * rng.standard_normal((n_places, dim))
    if noise == 0 and appearance_shift == 0:
        b = a.copy()

    n_train = int(round(n_places * train_fraction))
    gap = min(margin + 1, max(0, n_places - n_train - 2))
    train = (0, n_train)
    test = (min(n_train + gap, n_places - 1), n_places)
    pair = TraversalPair.synchronized(n_places, margin, train, test)
    return FeatureMatrix(a), FeatureMatrix(b), pair


def velocity_warp(n_query: int, seed: int, speeds=(0.5, 1.0, 2.0), segment: int = 12) -> np.ndarray:
    """Monotone frame map for a query vehicle whose speed changes piecewise.

    Speeds are relative to the database traversal (2.0 skips every other
    db frame, 0.5 dwells two frames per db frame).
    """
    rng = np.random.default_rng(seed)
    n_seg = -(-n_query // segment)
    v = np.repeat(rng.choice(np.asarray(speeds, dtype=np.float64), size=n_seg), segment)[:n_query]
    pos = np.concatenate([[0.0], np.cumsum(v[:-1])])
    return np.floor(pos + 1e-9).astype(np.int64)


def synth_sequence(
    n_places: int,
    dim: int,
    appearance_shift: float,
    noise: float,
    seed: int,
    margin: int = 2,
    varying_velocity: bool = True,
    corrupt_fraction: float = 0.0,
    train_fraction: float = 0.5,
):
    """Like :func:`synth_traversals` but the query is a resampled stream.

    The query traversal revisits the database places along
    :func:`velocity_warp` (or one frame per place), and optionally has a
    contiguous ``corrupt_fraction`` of its test frames replaced by pure
    noise (an occluded or blinded camera). Test ranges are chosen so both
    test sequences start and end at the same place.
    """
    from .featio import FeatureMatrix

    db, season, _ = synth_traversals(n_places, dim, appearance_shift, noise, seed, margin=margin)
    ss = np.random.SeedSequence(seed).spawn(5)
    if varying_velocity:
        fm = velocity_warp(4 * n_places, int(ss[3].generate_state(1)[0]))
        fm = fm[fm < n_places]
        # make the query end exactly on the last place
        fm = fm[: int(np.searchsorted(fm, n_places - 1)) + 1]
    else:
        fm = np.arange(n_places)
    rng = np.random.default_rng(ss[4])
    clean = season.values.astype(np.float64) - db.values.astype(np.float64)
    # season-side appearance of each place, re-noised per visit
    q = db.values[fm].astype(np.float64) + clean[fm] + noise * rng.standard_normal((fm.size, dim))

    n_q = fm.size
    q_train_end = int(np.searchsorted(fm, int(round(n_places * train_fraction))))
    db_train = (0, int(fm[q_train_end - 1]) + 1)
    q_test_start = int(np.searchsorted(fm, db_train[1] + margin + 1))
    db_test = (int(fm[q_test_start]), n_places)
    if corrupt_fraction > 0:
        n_test = n_q - q_test_start
        length = max(1, int(round(corrupt_fraction * n_test)))
        start = q_test_start + (n_test - length) // 2
        scale = float(np.std(q))
        q[start : start + length] = scale * rng.standard_normal((length, dim))
    pair = TraversalPair(
        db_frames=tuple(range(n_places)),
        query_frames=tuple(range(n_q)),
        fm=fm,
        margin=margin,
        train_db=db_train,
        train_query=(0, q_train_end),
        test_db=db_test,
        test_query=(q_test_start, n_q),
    )
    return db, FeatureMatrix(q), pair
