import subprocess
import sys

import numpy as np
import pytest

from vprhash import featio
from vprhash.cli import main
from vprhash.dataset import dump_manifest, synth_sequence
from vprhash.featio import FeatureMatrix
from vprhash.gist import write_pgm
from vprhash.hashlearn import orthogonality_error


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out), "--places", "120", "--dim", "32", "--seed", "4"]) == 0
    return out


def _train(d, method, out, bits=32, extra=()):
    return main([
        "train", "--manifest", str(d / "manifest.yaml"), "--db", str(d / "db.bpfv"),
        "--query", str(d / "query.bpfv"), "--method", method, "--bits", str(bits),
        "--out", str(out), *extra,
    ])


def _encode(model, feats, out):
    return main(["encode", "--model", str(model), "--features", str(feats), "--out", str(out)])


def _eval(d, db_codes, q_codes, out=None, extra=()):
    argv = ["eval", "--manifest", str(d / "manifest.yaml"), "--db-codes", str(db_codes),
            "--query-codes", str(q_codes), *extra]
    if out is not None:
        argv += ["--out", str(out)]
    return main(argv)


def _recall(path, key="recall_at_1"):
    for line in path.read_text().splitlines():
        name, value = line.split(",")
        if name == key:
            return float(value)
    raise KeyError(key)


def _pipeline(d, tmp, method, bits=32):
    assert _train(d, method, tmp / f"{method}.bphm", bits) == 0
    assert _encode(tmp / f"{method}.bphm", d / "db.bpfv", tmp / f"{method}_db.bpbc") == 0
    assert _encode(tmp / f"{method}.bphm", d / "query.bpfv", tmp / f"{method}_q.bpbc") == 0
    assert _eval(d, tmp / f"{method}_db.bpbc", tmp / f"{method}_q.bpbc", tmp / method) == 0
    return _recall(tmp / method / "recall.csv")


def test_synth_outputs(synth_dir, capsys):
    assert main(["info", str(synth_dir / "db.bpfv")]) == 0
    assert "features n=120 d=32" in capsys.readouterr().out
    assert main(["info", str(synth_dir / "manifest.yaml")]) == 0
    assert "margin=2" in capsys.readouterr().out


def test_ccaitq_not_worse_than_lsh(synth_dir, tmp_path):
    cca = _pipeline(synth_dir, tmp_path, "ccaitq")
    lsh = _pipeline(synth_dir, tmp_path, "lsh")
    assert cca >= lsh
    pr = (tmp_path / "ccaitq" / "pr.csv").read_text().splitlines()
    assert pr[0] == "depth,precision,recall"
    assert len(pr) > 2


def test_model_file_contract(synth_dir, tmp_path, capsys):
    assert _train(synth_dir, "ccaitq", tmp_path / "m.bphm") == 0
    model = featio.load_model(tmp_path / "m.bphm")
    assert model.method == "ccaitq" and model.k == 32
    assert orthogonality_error(model.R) <= 1e-8
    assert main(["info", str(tmp_path / "m.bphm")]) == 0
    assert "method=ccaitq" in capsys.readouterr().out


def test_lsh_ignores_labels(synth_dir, tmp_path):
    # a manifest with a different training split yields the same LSH model
    assert _train(synth_dir, "lsh", tmp_path / "a.bphm") == 0
    text = (synth_dir / "manifest.yaml").read_text()
    alt = tmp_path / "alt"
    alt.mkdir()
    (alt / "manifest.yaml").write_text(text.replace("margin: 2", "margin: 0"))
    for name in ("db.bpfv", "query.bpfv"):
        (alt / name).write_bytes((synth_dir / name).read_bytes())
    assert _train(alt, "lsh", tmp_path / "b.bphm") == 0
    assert (tmp_path / "a.bphm").read_bytes() == (tmp_path / "b.bphm").read_bytes()


def test_pipeline_byte_identical_rerun(synth_dir, tmp_path):
    runs = []
    for name in ("one", "two"):
        d = tmp_path / name
        d.mkdir()
        _pipeline(synth_dir, d, "ccaitq")
        runs.append([(d / f).read_bytes() for f in ("ccaitq.bphm", "ccaitq_db.bpbc", "ccaitq/pr.csv")])
    assert runs[0] == runs[1]


def test_self_retrieval(synth_dir, tmp_path):
    assert _train(synth_dir, "ccaitq", tmp_path / "m.bphm") == 0
    assert _encode(tmp_path / "m.bphm", synth_dir / "db.bpfv", tmp_path / "db.bpbc") == 0
    assert _eval(synth_dir, tmp_path / "db.bpbc", tmp_path / "db.bpbc", tmp_path / "r") == 0
    assert _recall(tmp_path / "r" / "recall.csv") == 100.0


def test_encode_roundtrip_against_unpack(synth_dir, tmp_path):
    from vprhash.codes import unpack
    from vprhash.hashlearn import project

    assert _train(synth_dir, "ccaitq", tmp_path / "m.bphm") == 0
    assert _encode(tmp_path / "m.bphm", synth_dir / "query.bpfv", tmp_path / "q.bpbc") == 0
    model = featio.load_model(tmp_path / "m.bphm")
    feats = featio.load_features(synth_dir / "query.bpfv")
    bits = unpack(featio.load_codes(tmp_path / "q.bpbc"))
    assert np.array_equal(bits, (project(model, feats.values) > 0).astype(np.uint8))


def test_dtw_flag_on_corrupted_stream(tmp_path):
    db, q, pair = synth_sequence(300, 64, 2.0, 0.3, seed=0, varying_velocity=False, corrupt_fraction=0.1)
    featio.save_features(db, tmp_path / "db.bpfv")
    featio.save_features(q, tmp_path / "query.bpfv")
    dump_manifest(pair, tmp_path / "manifest.yaml")
    assert _train(tmp_path, "ccaitq", tmp_path / "m.bphm", bits=16) == 0
    assert _encode(tmp_path / "m.bphm", tmp_path / "db.bpfv", tmp_path / "db.bpbc") == 0
    assert _encode(tmp_path / "m.bphm", tmp_path / "query.bpfv", tmp_path / "q.bpbc") == 0
    assert _eval(tmp_path, tmp_path / "db.bpbc", tmp_path / "q.bpbc", tmp_path / "r", ["--dtw"]) == 0
    before = _recall(tmp_path / "r" / "recall.csv")
    after = _recall(tmp_path / "r" / "recall.csv", "recall_at_1_dtw")
    assert after >= before

    out = tmp_path / "align.csv"
    assert main(["dtw", "--manifest", str(tmp_path / "manifest.yaml"), "--db-codes", str(tmp_path / "db.bpbc"),
                 "--query-codes", str(tmp_path / "q.bpbc"), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "query_idx,db_idx,cell_cost"
    assert len(lines) - 1 == pair.test_query[1] - pair.test_query[0]
    first = lines[1].split(",")
    assert int(first[0]) == pair.test_query[0] and int(first[1]) == pair.test_db[0]


def _frames(directory, n, size=64, seed=0):
    rng = np.random.default_rng(seed)
    directory.mkdir(exist_ok=True)
    for i in range(n):
        write_pgm(directory / f"frame_{i:03d}.pgm", rng.random((size, size + 16)))


def test_gist_command(tmp_path):
    _frames(tmp_path / "imgs", 3)
    out1, out2 = tmp_path / "a.bpfv", tmp_path / "b.bpfv"
    assert main(["gist", str(tmp_path / "imgs"), "--out", str(out1), "--image-size", "64"]) == 0
    feats = featio.load_features(out1)
    assert (feats.n, feats.d) == (3, 512)
    assert main(["gist", str(tmp_path / "imgs"), "--out", str(out2), "--image-size", "64"]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_gist_2048(tmp_path):
    _frames(tmp_path / "imgs", 2)
    out = tmp_path / "g.bpfv"
    assert main(["gist", str(tmp_path / "imgs"), "--out", str(out), "--image-size", "64", "--grid", "8"]) == 0
    assert featio.load_features(out).d == 2048


def test_gist_errors(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["gist", str(tmp_path / "empty"), "--out", str(tmp_path / "x.bpfv")]) == 3
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "0.pgm").write_bytes(b"garbage")
    assert main(["gist", str(bad), "--out", str(tmp_path / "x.bpfv")]) == 3


def test_k_equals_d_edge(tmp_path):
    # 2048-bit codes from 2048-D features; enough training frames for c >= d
    n, d = 1100, 2048
    rng = np.random.default_rng(0)
    base = rng.standard_normal((n, d)).astype(np.float32)
    featio.save_features(FeatureMatrix(base), tmp_path / "db.bpfv")
    featio.save_features(FeatureMatrix(base + 0.1 * rng.standard_normal((n, d)).astype(np.float32)),
                         tmp_path / "query.bpfv")
    (tmp_path / "manifest.yaml").write_text(
        f"db_frames: {n}\nquery_frames: {n}\nfm: identity\nmargin: 1\n"
        f"train_db: [0, 1030]\ntrain_query: [0, 1030]\ntest_db: [1040, {n}]\ntest_query: [1040, {n}]\n"
    )
    assert _train(tmp_path, "ccaitq", tmp_path / "m.bphm", bits=d, extra=["--iters", "2"]) == 0
    model = featio.load_model(tmp_path / "m.bphm")
    assert model.k == model.d == 2048
    assert orthogonality_error(model.R) <= 1e-8


def test_exit_codes(synth_dir, tmp_path):
    # missing file -> config error
    assert _train(synth_dir, "ccaitq", tmp_path / "m.bphm", extra=["--seed", "1"]) == 0
    assert main(["encode", "--model", str(tmp_path / "nope.bphm"), "--features",
                 str(synth_dir / "db.bpfv"), "--out", str(tmp_path / "c.bpbc")]) == 2
    # too many bits -> config error
    assert _train(synth_dir, "ccaitq", tmp_path / "big.bphm", bits=64) == 2
    # corrupted feature file -> data error
    broken = tmp_path / "broken.bpfv"
    broken.write_bytes(b"XXXXX\0" + (synth_dir / "db.bpfv").read_bytes()[6:])
    assert main(["encode", "--model", str(tmp_path / "m.bphm"), "--features", str(broken),
                 "--out", str(tmp_path / "c.bpbc")]) == 3
    # dimension mismatch -> data error
    featio.save_features(FeatureMatrix(np.zeros((2, 5))), tmp_path / "small.bpfv")
    assert main(["encode", "--model", str(tmp_path / "m.bphm"), "--features", str(tmp_path / "small.bpfv"),
                 "--out", str(tmp_path / "c.bpbc")]) == 3
    # bad manifest -> config error
    (tmp_path / "bad.yaml").write_text("db_frames: 3\n")
    assert main(["eval", "--manifest", str(tmp_path / "bad.yaml"), "--db-codes", "x", "--query-codes", "y"]) == 2


def test_module_entry_point_and_verbose(synth_dir):
    proc = subprocess.run(
        [sys.executable, "-m", "vprhash", "info", "-v", str(synth_dir / "db.bpfv")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout.startswith("features")
    proc = subprocess.run([sys.executable, "-m", "vprhash", "info", "/no/such/file"], capture_output=True)
    assert proc.returncode == 2
