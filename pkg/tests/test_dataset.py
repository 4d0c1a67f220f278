import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vprhash.dataset import (
    ManifestError,
    TraversalPair,
    build_similarity_labels,
    dump_manifest,
    is_true_positive,
    load_traversal_pair,
    synth_sequence,
    synth_traversals,
    velocity_warp,
)
from vprhash.evaluation import raw_matches, recall_at_1


def _manifest(**over):
    doc = {
        "db_frames": 16000,
        "query_frames": 16000,
        "fm": "identity",
        "margin": 5,
        "train_db": [0, 10000],
        "train_query": [0, 10000],
        "test_db": [11000, 16000],
        "test_query": [11000, 16000],
        "fps": 2,
    }
    doc.update(over)
    return doc


def test_synchronized_manifest_from_yaml(tmp_path):
    path = tmp_path / "sync.yaml"
    path.write_text(
        "db_frames: 16000\nquery_frames: 16000\nfm: identity\nmargin: 5\n"
        "train_db: [0, 10000]\ntrain_query: [0, 10000]\n"
        "test_db: [11000, 16000]\ntest_query: [11000, 16000]\nfps: 2\n"
    )
    pair = load_traversal_pair(path)
    assert pair.n_db == pair.n_query == 16000
    assert np.array_equal(pair.fm, np.arange(16000))
    assert pair.margin == 5
    assert pair.train_db == (0, 10000) and pair.test_query == (11000, 16000)
    assert pair.fps == 2.0


def test_explicit_fm_list():
    pair = load_traversal_pair(
        _manifest(db_frames=3, query_frames=3, fm=[0, 1, 2], margin=0,
                  train_db=[0, 2], train_query=[0, 2], test_db=[2, 3], test_query=[2, 3])
    )
    assert pair.fm.tolist() == [0, 1, 2]


def test_fm_out_of_bounds():
    fm = list(range(10))
    fm[2] = 99
    with pytest.raises(ManifestError, match="out of bounds"):
        load_traversal_pair(
            _manifest(db_frames=10, query_frames=10, fm=fm,
                      train_db=[0, 5], train_query=[0, 5], test_db=[6, 10], test_query=[6, 10])
        )


def test_fm_from_file(tmp_path):
    (tmp_path / "fm.txt").write_text("\n".join(str(v) for v in [0, 0, 1, 2, 2, 3]) + "\n")
    man = tmp_path / "m.yaml"
    man.write_text(
        "db_frames: 4\nquery_frames: 6\nfm: fm.txt\nmargin: 0\n"
        "train_db: [0, 2]\ntrain_query: [0, 3]\ntest_db: [2, 4]\ntest_query: [3, 6]\n"
    )
    assert load_traversal_pair(man).fm.tolist() == [0, 0, 1, 2, 2, 3]


def test_missing_keys():
    doc = _manifest()
    del doc["margin"], doc["test_db"]
    with pytest.raises(ManifestError, match="missing keys: margin, test_db"):
        load_traversal_pair(doc)


def test_overlapping_ranges_rejected():
    with pytest.raises(ManifestError, match="overlapping"):
        load_traversal_pair(_manifest(test_query=[9000, 16000]))


def test_negative_margin_rejected():
    with pytest.raises(ManifestError):
        load_traversal_pair(_manifest(margin=-1))


def test_manifest_dump_roundtrip(tmp_path):
    pair = load_traversal_pair(_manifest())
    dump_manifest(pair, tmp_path / "out.yaml")
    again = load_traversal_pair(tmp_path / "out.yaml")
    assert again.train_db == pair.train_db and again.margin == pair.margin
    assert np.array_equal(again.fm, pair.fm)


def _sync(n=400, margin=5):
    return TraversalPair.synchronized(n, margin, (0, 40), (50, n))


@pytest.mark.parametrize("retrieved,expected", [(103, True), (106, False), (95, True), (94, False)])
def test_is_true_positive_identity(retrieved, expected):
    assert is_true_positive(_sync(), 100, retrieved) is expected


def test_is_true_positive_external_fm():
    fm = np.arange(400)
    fm[100] = 240
    pair = TraversalPair(tuple(range(400)), tuple(range(400)), fm, 10, (0, 40), (0, 40), (50, 400), (50, 400))
    assert is_true_positive(pair, 100, 236)
    assert not is_true_positive(pair, 100, 229)


def test_is_true_positive_out_of_range():
    with pytest.raises(IndexError):
        is_true_positive(_sync(), 10, 100)
    with pytest.raises(IndexError):
        is_true_positive(_sync(), 100, 400)


@given(st.integers(0, 8), st.integers(50, 399))
def test_true_positive_window_size(margin, q):
    pair = _sync(margin=margin)
    hits = [j for j in range(50, 400) if is_true_positive(pair, q, j)]
    lo, hi = max(50, q - margin), min(399, q + margin)
    assert hits == list(range(lo, hi + 1))
    assert len(hits) <= 2 * margin + 1


def _five_pair(margin):
    return TraversalPair.synchronized(7, margin, (0, 5), (5, 7))


def test_labels_interior_row():
    labels = build_similarity_labels(_five_pair(1))
    assert labels.n_rows == labels.n_cols == 10
    row = labels.matrix[5 + 2].toarray().ravel()  # query frame 2
    assert np.flatnonzero(row).tolist() == [1, 2, 3, 6, 7, 8]


def test_labels_border_row():
    labels = build_similarity_labels(_five_pair(1))
    row = labels.matrix[5 + 0].toarray().ravel()
    assert np.flatnonzero(row).tolist() == [0, 1, 5, 6]


def test_labels_margin_zero():
    labels = build_similarity_labels(_five_pair(0))
    counts = np.diff(labels.matrix.indptr)
    assert counts.tolist() == [2] * 10
    for r in range(5):
        assert {(r, r), (r, r + 5)} <= labels.entries()


def test_labels_non_injective_fm_unions_preimages():
    # query frames 1 and 2 both show db frame 1
    fm = np.array([0, 1, 1, 2, 3, 4])
    pair = TraversalPair(tuple(range(5)), tuple(range(6)), fm, 0, (0, 4), (0, 5), (4, 5), (5, 6))
    labels = build_similarity_labels(pair)
    db1 = np.flatnonzero(labels.matrix[1].toarray().ravel()).tolist()
    assert db1 == [1, 4 + 1, 4 + 2]


@settings(max_examples=40, deadline=None)
@given(n=st.integers(6, 40), margin=st.integers(0, 4), split=st.floats(0.3, 0.7))
def test_label_invariants(n, margin, split):
    n_train = max(2, int(n * split))
    pair = TraversalPair.synchronized(n, margin, (0, n_train), (n_train, n))
    labels = build_similarity_labels(pair)
    m = labels.matrix
    assert np.all(m.diagonal() == 1)
    counts = np.diff(m.indptr)
    assert counts.min() >= 2
    assert counts.max() <= 2 * (2 * margin + 1)
    assert labels.nnz <= labels.n_rows * 2 * (2 * margin + 1)
    # identity fm makes the relation symmetric
    assert (m != m.T).nnz == 0


def test_synth_deterministic():
    a1, b1, p1 = synth_traversals(50, 16, 1.0, 0.2, seed=7)
    a2, b2, p2 = synth_traversals(50, 16, 1.0, 0.2, seed=7)
    assert a1 == a2 and b1 == b2
    assert p1.train_db == p2.train_db


def test_synth_no_shift_no_noise_identical():
    a, b, _ = synth_traversals(30, 8, 0.0, 0.0, seed=3)
    assert a == b


def test_synth_validation():
    with pytest.raises(ValueError):
        synth_traversals(3, 8, 1.0, 0.1, 0)
    with pytest.raises(ValueError):
        synth_traversals(10, 1, 1.0, 0.1, 0)


def test_synth_raw_recall_below_perfect():
    # oracle: the evaluation module's raw-feature nearest neighbour
    db, q, pair = synth_traversals(200, 64, 2.0, 0.3, seed=0)
    matches = raw_matches(db.rows(pair.test_db), q.rows(pair.test_query), 1,
                          pair.test_query[0], pair.test_db[0])
    assert recall_at_1(pair, matches) < 100.0


def test_velocity_warp_monotone_unit_steps():
    fm = velocity_warp(200, seed=1)
    steps = np.diff(fm)
    assert fm[0] == 0
    assert set(steps.tolist()) <= {0, 1, 2}
    assert {0, 2} <= set(steps.tolist())


def test_synth_sequence_ranges_aligned():
    db, q, pair = synth_sequence(120, 16, 1.0, 0.2, seed=2, corrupt_fraction=0.1)
    assert q.n == pair.n_query
    assert pair.fm[pair.test_query[0]] == pair.test_db[0]
    assert pair.fm[pair.test_query[1] - 1] == pair.test_db[1] - 1
    assert pair.train_db[1] <= pair.test_db[0]
