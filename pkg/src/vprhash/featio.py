"""Binary file formats for features, hash models and packed codes.

Layouts (all little-endian):

* features  ``BPFV1\\0`` u32 n, u32 d, u32 frame_offset, n*d float32
* model     ``BPHM1\\0`` u8 method, u32 d, u32 k, mean d*f64, W d*k f64, R k*k f64
* codes     ``BPBC1\\0`` u32 n, u32 k, n*ceil(k/64) uint64 words
"""
from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

FEATURE_MAGIC = b"BPFV1\0"
MODEL_MAGIC = b"BPHM1\0"
CODES_MAGIC = b"BPBC1\0"

_FEAT_HEADER = struct.Struct("<6sIII")
_MODEL_HEADER = struct.Struct("<6sBII")
_CODES_HEADER = struct.Struct("<6sII")


class FormatError(ValueError):
    """A file does not conform to its binary layout."""


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """``n x d`` float32 descriptors; row 0 is frame ``frame_offset``."""

    values: np.ndarray
    frame_offset: int = 0

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float32, order="C", copy=True)
        if v.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature matrix contains non-finite values")
        if self.frame_offset < 0:
            raise ValueError("frame_offset must be >= 0")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def rows(self, r: tuple[int, int]) -> np.ndarray:
        """Rows for the global frame range ``[r0, r1)``."""
        lo, hi = r[0] - self.frame_offset, r[1] - self.frame_offset
        if lo < 0 or hi > self.n:
            raise IndexError(
                f"frames [{r[0]}, {r[1]}) not covered by features "
                f"[{self.frame_offset}, {self.frame_offset + self.n})"
            )
        return self.values[lo:hi]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return (
            self.frame_offset == other.frame_offset
            and self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
        )


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    buf = source.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated {what}: expected {n} bytes, got {len(buf)}")
    return buf


def _expect_magic(got: bytes, magic: bytes) -> None:
    if got != magic:
        raise FormatError(f"bad magic: expected {magic!r}, got {got!r}")


def write_features(m: FeatureMatrix, sink: BinaryIO) -> int:
    header = _FEAT_HEADER.pack(FEATURE_MAGIC, m.n, m.d, m.frame_offset)
    payload = m.values.astype("<f4", copy=False).tobytes()
    sink.write(header)
    sink.write(payload)
    return len(header) + len(payload)


def read_features(source: BinaryIO) -> FeatureMatrix:
    head = source.read(_FEAT_HEADER.size)
    if len(head) >= 6:
        _expect_magic(head[:6], FEATURE_MAGIC)
    if len(head) != _FEAT_HEADER.size:
        raise FormatError("truncated header")
    _, n, d, offset = _FEAT_HEADER.unpack(head)
    raw = _read_exact(source, 4 * n * d, "payload")
    values = np.frombuffer(raw, dtype="<f4").reshape(n, d)
    if not np.all(np.isfinite(values)):
        raise FormatError("non-finite feature values")
    return FeatureMatrix(values, offset)


def read_features_csv(path: str | os.PathLike, frame_offset: int = 0) -> FeatureMatrix:
    """Import one comma-separated row per line (external CNN dumps)."""
    values = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: non-finite feature values")
    return FeatureMatrix(values, frame_offset)


def write_model(model, sink: BinaryIO) -> int:
    from .hashlearn import METHOD_TAGS

    tag = METHOD_TAGS[model.method]
    d, k = model.W.shape
    parts = [
        _MODEL_HEADER.pack(MODEL_MAGIC, tag, d, k),
        np.asarray(model.mean, dtype="<f8").tobytes(),
        np.asarray(model.W, dtype="<f8").tobytes(),
        np.asarray(model.R, dtype="<f8").tobytes(),
    ]
    for p in parts:
        sink.write(p)
    return sum(len(p) for p in parts)


def read_model(source: BinaryIO):
    from .hashlearn import TAG_METHODS, HashModel

    head = source.read(_MODEL_HEADER.size)
    if len(head) >= 6:
        _expect_magic(head[:6], MODEL_MAGIC)
    if len(head) != _MODEL_HEADER.size:
        raise FormatError("truncated header")
    _, tag, d, k = _MODEL_HEADER.unpack(head)
    if tag not in TAG_METHODS:
        raise FormatError(f"unknown method tag {tag}")
    if k == 0:
        raise FormatError("empty code: k = 0")
    mean = np.frombuffer(_read_exact(source, 8 * d, "mean"), dtype="<f8")
    W = np.frombuffer(_read_exact(source, 8 * d * k, "projection"), dtype="<f8").reshape(d, k)
    R = np.frombuffer(_read_exact(source, 8 * k * k, "rotation"), dtype="<f8").reshape(k, k)
    for name, arr in (("mean", mean), ("projection", W), ("rotation", R)):
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"non-finite {name}")
    return HashModel(TAG_METHODS[tag], mean.astype(np.float64), W.astype(np.float64), R.astype(np.float64))


def write_codes(codes, sink: BinaryIO) -> int:
    header = _CODES_HEADER.pack(CODES_MAGIC, codes.n, codes.k)
    payload = codes.words.astype("<u8", copy=False).tobytes()
    sink.write(header)
    sink.write(payload)
    return len(header) + len(payload)


def read_codes(source: BinaryIO):
    from .codes import BinaryCodeSet, words_per_code

    head = source.read(_CODES_HEADER.size)
    if len(head) >= 6:
        _expect_magic(head[:6], CODES_MAGIC)
    if len(head) != _CODES_HEADER.size:
        raise FormatError("truncated header")
    _, n, k = _CODES_HEADER.unpack(head)
    if k == 0:
        raise FormatError("empty code: k = 0")
    w = words_per_code(k)
    raw = _read_exact(source, 8 * n * w, "payload")
    words = np.frombuffer(raw, dtype="<u8").reshape(n, w).astype(np.uint64)
    try:
        return BinaryCodeSet(words, k)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def _save(writer, obj, path: str | os.PathLike) -> int:
    buf = io.BytesIO()
    n = writer(obj, buf)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())
    return n


def _load(reader, path: str | os.PathLike):
    with open(path, "rb") as fh:
        obj = reader(fh)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    return obj


def save_features(m: FeatureMatrix, path) -> int:
    return _save(write_features, m, path)


def load_features(path) -> FeatureMatrix:
    if os.fspath(path).endswith(".csv"):
        return read_features_csv(path)
    return _load(read_features, path)


def save_model(model, path) -> int:
    return _save(write_model, model, path)


def load_model(path):
    return _load(read_model, path)


def save_codes(codes, path) -> int:
    return _save(write_codes, codes, path)


def load_codes(path):
    return _load(read_codes, path)


def sniff(path: str | os.PathLike) -> str | None:
    """Return ``"features"``, ``"model"`` or ``"codes"`` from the file magic."""
    with open(path, "rb") as fh:
        magic = fh.read(6)
    return {FEATURE_MAGIC: "features", MODEL_MAGIC: "model", CODES_MAGIC: "codes"}.get(magic)
