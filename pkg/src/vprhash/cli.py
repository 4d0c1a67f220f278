"""Command line entry point: ``vprhash <command> ...``.

Exit status: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import featio, hashlearn, pipeline
from .codes import BinaryCodeSet
from .dataset import ManifestError, dump_manifest, load_traversal_pair, synth_traversals
from .evaluation import DEFAULT_DEPTHS
from .featio import FeatureMatrix, FormatError
from .gist import make_gabor_bank, gist_descriptor, read_pgm
from .seqmatch import DEFAULT_GAMMA, align_codes

log = logging.getLogger("vprhash")

EXIT_CONFIG = 2
EXIT_DATA = 3

IMAGE_SUFFIXES = {".pgm", ".pnm", ".png"}


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


def _existing(path: str) -> str:
    if not os.path.exists(path):
        raise ConfigError(f"no such file: {path}")
    return path


def _load(loader, path: str):
    try:
        return loader(_existing(path))
    except (FormatError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def _manifest(path: str):
    try:
        return load_traversal_pair(_existing(path))
    except ManifestError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_depths(text: str | None, n_db: int) -> list[int]:
    if not text:
        return [*DEFAULT_DEPTHS, n_db]
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok == "all":
            out.append(n_db)
        else:
            try:
                out.append(int(tok))
            except ValueError:
                raise ConfigError(f"bad depth {tok!r}") from None
    if min(out) < 1:
        raise ConfigError("depths must be >= 1")
    return out


def _out_dir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_gist(args) -> None:
    src = Path(_existing(args.input))
    files = sorted(p for p in src.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DataError(f"{src}: no frames")
    orients = [int(v) for v in args.orients.split(",")]
    try:
        bank = make_gabor_bank(len(orients), orients, args.image_size, args.grid)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = []
    for f in files:
        try:
            rows.append(gist_descriptor(read_pgm(f), bank))
        except ValueError as exc:
            raise DataError(f"{f}: {exc}") from exc
    feats = FeatureMatrix(np.vstack(rows), args.offset)
    featio.save_features(feats, args.out)
    log.info("wrote %d x %d gist features to %s", feats.n, feats.d, args.out)


def cmd_synth(args) -> None:
    db, query, pair = synth_traversals(
        args.places, args.dim, args.shift, args.noise, args.seed, margin=args.margin
    )
    out = _out_dir(args.out)
    featio.save_features(db, out / "db.bpfv")
    featio.save_features(query, out / "query.bpfv")
    dump_manifest(pair, out / "manifest.yaml")
    log.info("wrote synthetic traversals (%d places, d=%d) to %s", args.places, args.dim, out)


def cmd_train(args) -> None:
    pair = _manifest(args.manifest)
    db = _load(featio.load_features, args.db)
    query = _load(featio.load_features, args.query)
    if db.d != query.d:
        raise DataError(f"dimension mismatch between traversal features: {db.d} vs {query.d}")
    if args.bits < 1:
        raise ConfigError("--bits must be >= 1")
    if args.method == hashlearn.CCAITQ and args.bits > db.d:
        raise ConfigError(f"--bits {args.bits} exceeds feature dimension {db.d}")
    try:
        model = pipeline.train(pair, db, query, args.method, args.bits, args.reg, args.iters, args.seed)
    except IndexError as exc:
        raise ConfigError(f"training range not covered by features: {exc}") from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    featio.save_model(model, args.out)
    if model.loss_history:
        log.info("ITQ loss %.4f -> %.4f", model.loss_history[0], model.loss_history[-1])
    log.info("wrote %s model (d=%d, k=%d) to %s", model.method, model.d, model.k, args.out)


def cmd_encode(args) -> None:
    model = _load(featio.load_model, args.model)
    feats = _load(featio.load_features, args.features)
    if feats.d != model.d:
        raise DataError(f"feature dimension {feats.d} does not match model d={model.d}")
    codes = hashlearn.encode(model, feats.values)
    featio.save_codes(codes, args.out)
    log.info("wrote %d codes of %d bits to %s (frame offset %d)", codes.n, codes.k, args.out, feats.frame_offset)


def _test_codes(args, pair) -> tuple[BinaryCodeSet, BinaryCodeSet]:
    db = _load(featio.load_codes, args.db_codes)
    query = _load(featio.load_codes, args.query_codes)
    if db.k != query.k:
        raise DataError(f"code length mismatch: {db.k} vs {query.k}")
    out = []
    for codes, r, offset, name in (
        (db, pair.test_db, args.db_offset, "db"),
        (query, pair.test_query, args.query_offset, "query"),
    ):
        lo, hi = r[0] - offset, r[1] - offset
        if lo < 0 or hi > codes.n:
            raise ConfigError(f"{name} test range {r} not covered by {codes.n} codes at offset {offset}")
        if hi == lo:
            raise ConfigError(f"empty {name} test range")
        out.append(codes.subset(lo, hi))
    return out[0], out[1]


def cmd_eval(args) -> None:
    pair = _manifest(args.manifest)
    db, query = _test_codes(args, pair)
    depths = _parse_depths(args.depths, db.n)
    report = pipeline.evaluate_codes(pair, db, query, depths, dtw=args.dtw, gamma=args.gamma, band=args.band)
    lines = [f"recall_at_1,{report.recall_at_1:.4f}"]
    if report.recall_at_1_dtw is not None:
        lines.append(f"recall_at_1_dtw,{report.recall_at_1_dtw:.4f}")
    summary = "\n".join(lines) + "\n"
    sys.stdout.write(summary)
    if args.out:
        out = _out_dir(args.out)
        (out / "recall.csv").write_text(summary)
        (out / "pr.csv").write_text(report.pr.to_csv())


def cmd_dtw(args) -> None:
    pair = _manifest(args.manifest)
    db, query = _test_codes(args, pair)
    assignment, path, cost = align_codes(query, db, args.gamma, args.band)
    q0, d0 = pair.test_query[0], pair.test_db[0]
    lines = ["query_idx,db_idx,cell_cost"]
    lines += [f"{q0 + i},{d0 + j},{cost[i, j]:.6f}" for i, j in enumerate(assignment)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_info(args) -> None:
    path = _existing(args.file)
    kind = featio.sniff(path)
    if kind == "features":
        m = _load(featio.load_features, path)
        print(f"features n={m.n} d={m.d} frame_offset={m.frame_offset}")
    elif kind == "model":
        m = _load(featio.load_model, path)
        err = hashlearn.orthogonality_error(m.R)
        print(f"model method={m.method} d={m.d} k={m.k} orthogonality_error={err:.3e}")
    elif kind == "codes":
        c = _load(featio.load_codes, path)
        print(f"codes n={c.n} k={c.k}")
    else:
        try:
            pair = load_traversal_pair(path)
        except ManifestError as exc:
            raise DataError(f"{path}: unrecognised file ({exc})") from exc
        print(
            f"manifest db={pair.n_db} query={pair.n_query} margin={pair.margin} "
            f"train_db={pair.train_db} train_query={pair.train_query} "
            f"test_db={pair.test_db} test_query={pair.test_query}"
        )


def _add_code_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True)
    p.add_argument("--db-codes", required=True)
    p.add_argument("--query-codes", required=True)
    p.add_argument("--db-offset", type=int, default=0, help="frame index of the first db code")
    p.add_argument("--query-offset", type=int, default=0, help="frame index of the first query code")
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA, help="contrast exponent for DTW costs")
    p.add_argument("--band", type=int, default=None, help="optional Sakoe-Chiba band width")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vprhash", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gist", parents=[common], help="gist descriptors for a directory of PGM frames")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=int, default=4)
    p.add_argument("--image-size", type=int, default=256)
    p.add_argument("--orients", default="8,8,8,8", help="orientations per scale")
    p.add_argument("--offset", type=int, default=0, help="frame index of the first image")
    p.set_defaults(func=cmd_gist)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic two-season experiment")
    p.add_argument("--out", required=True)
    p.add_argument("--places", type=int, default=200)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--shift", type=float, default=2.0)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--margin", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="learn a hash model on the train ranges")
    p.add_argument("--manifest", required=True)
    p.add_argument("--db", required=True, help="database feature file")
    p.add_argument("--query", required=True, help="query feature file")
    p.add_argument("--method", choices=[hashlearn.LSH, hashlearn.CCAITQ], default=hashlearn.CCAITQ)
    p.add_argument("--bits", type=int, default=64)
    p.add_argument("--reg", type=float, default=None, help="CCA ridge (default 1e-4 * trace(Cxx) / d)")
    p.add_argument("--iters", type=int, default=hashlearn.ITQ_ITERATIONS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", parents=[common], help="binary codes for every row of a feature file")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("eval", parents=[common], help="recall@1 and precision-recall on the test ranges")
    _add_code_args(p)
    p.add_argument("--depths", default=None, help="comma list, 'all' = whole test db")
    p.add_argument("--dtw", action="store_true", help="also report recall after DTW alignment")
    p.add_argument("--out", default=None, help="directory for recall.csv and pr.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dtw", parents=[common], help="align the query test range to the db test range")
    _add_code_args(p)
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.set_defaults(func=cmd_dtw)

    p = sub.add_parser("info", parents=[common], help="describe a feature, model, code or manifest file")
    p.add_argument("file")
    p.set_defaults(func=cmd_info)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"vprhash: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FormatError) as exc:
        print(f"vprhash: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"vprhash: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
