"""Datasets, their on-disk formats, validation and the synthetic generator.

File formats (all integers little-endian):

``GCMX`` matrix
    4 magic bytes ``b"GCMX"``, one precision byte (8 = float64, 4 = float32),
    rows as uint32, cols as uint32, then ``rows * cols`` IEEE values in
    row-major order.

``GCLB`` labels
    4 magic bytes ``b"GCLB"``, count as uint32, then ``count`` uint32 ids.

Manifest
    UTF-8 ``key = value`` lines.  ``features``, ``labels`` and ``attributes``
    name files in the same directory.  ``seen_classes``, ``unseen_classes``,
    ``train_idx``, ``test_seen_idx`` and ``test_unseen_idx`` hold
    comma-separated 0-based ids, or ``@name`` to read the list from a text
    file (ids separated by commas or whitespace).
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    InvariantViolationError,
    MagicMismatchError,
    ManifestError,
    MissingAttributeError,
    ShapeMismatchError,
    TruncatedFileError,
)

MATRIX_MAGIC = b"GCMX"
LABEL_MAGIC = b"GCLB"
MANIFEST_NAME = "manifest.txt"

_PRECISION_FLAGS = {8: np.dtype("<f8"), 4: np.dtype("<f4")}
_MATRIX_HEADER = struct.Struct("<4sBII")
_LABEL_HEADER = struct.Struct("<4sI")

LIST_KEYS = ("seen_classes", "unseen_classes", "train_idx", "test_seen_idx", "test_unseen_idx")
FILE_KEYS = ("features", "labels", "attributes")


# ------------------------------------------------------------ binary formats


def encode_matrix(matrix):
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise ShapeMismatchError(f"GCMX holds 2-D matrices, got shape {m.shape}")
    if m.dtype == np.float32:
        flag = 4
    elif m.dtype == np.float64:
        flag = 8
    else:
        raise DataError(f"GCMX stores float32 or float64, got {m.dtype}")
    body = np.ascontiguousarray(m, dtype=_PRECISION_FLAGS[flag]).tobytes()
    return _MATRIX_HEADER.pack(MATRIX_MAGIC, flag, m.shape[0], m.shape[1]) + body


def decode_matrix(buf, source="<bytes>"):
    if len(buf) < _MATRIX_HEADER.size:
        raise TruncatedFileError(
            f"{source}: {len(buf)} bytes is shorter than the {_MATRIX_HEADER.size}-byte GCMX header")
    magic, flag, rows, cols = _MATRIX_HEADER.unpack_from(buf)
    if magic != MATRIX_MAGIC:
        raise MagicMismatchError(f"{source}: bad magic {magic!r}, expected {MATRIX_MAGIC!r}")
    if flag not in _PRECISION_FLAGS:
        raise DataError(f"{source}: unknown precision flag {flag}")
    dtype = _PRECISION_FLAGS[flag]
    expected = _MATRIX_HEADER.size + rows * cols * dtype.itemsize
    if len(buf) < expected:
        raise TruncatedFileError(
            f"{source}: expected {expected} bytes for a {rows}x{cols} matrix, found {len(buf)}")
    if len(buf) > expected:
        raise ShapeMismatchError(
            f"{source}: {len(buf) - expected} trailing bytes after a {rows}x{cols} matrix")
    data = np.frombuffer(buf, dtype=dtype, count=rows * cols, offset=_MATRIX_HEADER.size)
    return data.reshape(rows, cols).astype(dtype.newbyteorder("="))


def encode_labels(labels):
    ids = np.asarray(labels)
    if ids.ndim != 1:
        raise ShapeMismatchError(f"GCLB holds a 1-D id list, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() > 0xFFFFFFFF):
        raise DataError("GCLB ids must fit in uint32")
    return _LABEL_HEADER.pack(LABEL_MAGIC, ids.size) + ids.astype("<u4").tobytes()


def decode_labels(buf, source="<bytes>"):
    if len(buf) < _LABEL_HEADER.size:
        raise TruncatedFileError(
            f"{source}: {len(buf)} bytes is shorter than the {_LABEL_HEADER.size}-byte GCLB header")
    magic, count = _LABEL_HEADER.unpack_from(buf)
    if magic != LABEL_MAGIC:
        raise MagicMismatchError(f"{source}: bad magic {magic!r}, expected {LABEL_MAGIC!r}")
    expected = _LABEL_HEADER.size + 4 * count
    if len(buf) < expected:
        raise TruncatedFileError(
            f"{source}: expected {expected} bytes for {count} labels, found {len(buf)}")
    if len(buf) > expected:
        raise ShapeMismatchError(f"{source}: {len(buf) - expected} trailing bytes after {count} labels")
    return np.frombuffer(buf, dtype="<u4", count=count, offset=_LABEL_HEADER.size).astype(np.int64)


def _atomic_write(path, payload):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def write_matrix(path, matrix):
    _atomic_write(path, encode_matrix(matrix))


def read_matrix(path):
    path = Path(path)
    return decode_matrix(path.read_bytes(), str(path))


def write_labels(path, labels):
    _atomic_write(path, encode_labels(labels))


def read_labels(path):
    path = Path(path)
    return decode_labels(path.read_bytes(), str(path))


# ------------------------------------------------------------------ manifest


def parse_kv(text, source="<text>"):
    """Parse ``key = value`` lines; ``#`` starts a comment.  Duplicate keys are an error."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ManifestError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ManifestError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ManifestError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _parse_id_list(text, source):
    tokens = text.replace(",", " ").split()
    try:
        return np.array([int(t) for t in tokens], dtype=np.int64)
    except ValueError as exc:
        raise ManifestError(f"{source}: non-integer id in list ({exc})") from None


def _format_id_list(ids):
    return ",".join(str(int(i)) for i in ids)


# ------------------------------------------------------------------- dataset


@dataclass
class Dataset:
    """Features, labels and per-class attributes plus the seen/unseen split.

    ``attributes`` has one row per class id (row ``c`` describes class ``c``).
    ``test_seen`` may be empty for ZSL-only data.
    """

    features: np.ndarray
    labels: np.ndarray
    attributes: np.ndarray
    seen_classes: np.ndarray
    unseen_classes: np.ndarray
    train_idx: np.ndarray
    test_unseen_idx: np.ndarray
    test_seen_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    fingerprint: str = ""

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        for name in LIST_KEYS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64))

    @property
    def d_x(self):
        return self.features.shape[1]

    @property
    def d_a(self):
        return self.attributes.shape[1]

    def attribute_rows(self, classes):
        classes = np.asarray(classes, dtype=np.int64)
        bad = [int(c) for c in classes if c < 0 or c >= self.attributes.shape[0]]
        if bad:
            raise MissingAttributeError(f"no attribute row for class(es) {bad}")
        return self.attributes[classes]

    def astype(self, dtype):
        return Dataset(self.features.astype(dtype), self.labels, self.attributes.astype(dtype),
                       self.seen_classes, self.unseen_classes, self.train_idx,
                       self.test_unseen_idx, self.test_seen_idx, self.fingerprint)

    # -- serialization

    def to_files(self):
        """Canonical on-disk representation as ``{filename: bytes}``."""
        files = {
            "features.gcmx": encode_matrix(self.features),
            "labels.gclb": encode_labels(self.labels),
            "attributes.gcmx": encode_matrix(self.attributes),
        }
        lines = ["features = features.gcmx", "labels = labels.gclb", "attributes = attributes.gcmx",
                 f"seen_classes = {_format_id_list(self.seen_classes)}",
                 f"unseen_classes = {_format_id_list(self.unseen_classes)}"]
        for key in ("train_idx", "test_seen_idx", "test_unseen_idx"):
            fname = f"{key}.txt"
            files[fname] = ("\n".join(str(int(i)) for i in getattr(self, key)) + "\n").encode()
            lines.append(f"{key} = @{fname}")
        files[MANIFEST_NAME] = ("\n".join(lines) + "\n").encode("utf-8")
        return files

    def compute_fingerprint(self):
        return _hash_files(self.to_files())


def _hash_files(files):
    h = hashlib.sha256()
    for name in sorted(files):
        h.update(name.encode())
        h.update(len(files[name]).to_bytes(8, "little"))
        h.update(files[name])
    return h.hexdigest()


def save_dataset(dataset, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = dataset.to_files()
    for name, payload in files.items():
        _atomic_write(directory / name, payload)
    return _hash_files(files)


def load_dataset(directory, check=True):
    """Read a dataset directory, validate it, and attach its content hash."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not directory.is_dir():
        raise DataError(f"dataset directory not found: {directory}")
    if not manifest_path.is_file():
        raise ManifestError(f"{manifest_path}: manifest missing")
    raw = {MANIFEST_NAME: manifest_path.read_bytes()}
    kv = parse_kv(raw[MANIFEST_NAME].decode("utf-8"), str(manifest_path))
    unknown = set(kv) - set(FILE_KEYS) - set(LIST_KEYS)
    if unknown:
        raise ManifestError(f"{manifest_path}: unknown keys {sorted(unknown)}")
    missing = [k for k in FILE_KEYS + LIST_KEYS if k not in kv and k != "test_seen_idx"]
    if missing:
        raise ManifestError(f"{manifest_path}: missing keys {missing}")

    def read_file(name):
        path = directory / name
        if not path.is_file():
            raise ManifestError(f"{manifest_path}: referenced file {name!r} does not exist")
        raw[name] = path.read_bytes()
        return raw[name], str(path)

    features = decode_matrix(*read_file(kv["features"]))
    labels = decode_labels(*read_file(kv["labels"]))
    attributes = decode_matrix(*read_file(kv["attributes"]))
    lists = {}
    for key in LIST_KEYS:
        value = kv.get(key, "")
        if value.startswith("@"):
            buf, src = read_file(value[1:])
            lists[key] = _parse_id_list(buf.decode("utf-8"), src)
        else:
            lists[key] = _parse_id_list(value, f"{manifest_path}:{key}")
    if features.shape[0] != labels.shape[0]:
        raise ShapeMismatchError(
            f"{directory / kv['labels']}: {labels.shape[0]} labels for "
            f"{features.shape[0]} feature rows in {kv['features']}")
    ds = Dataset(features, labels, attributes, lists["seen_classes"], lists["unseen_classes"],
                 lists["train_idx"], lists["test_unseen_idx"], lists["test_seen_idx"],
                 fingerprint=_hash_files(raw))
    if check:
        problems = validate(ds)
        if problems:
            missing_attr = [p for p in problems if p.startswith("missing attribute")]
            if missing_attr:
                raise MissingAttributeError(f"{directory}: " + "; ".join(missing_attr))
            raise InvariantViolationError(f"{directory}: " + "; ".join(problems), problems)
    return ds


# ---------------------------------------------------------------- validation


def validate(ds):
    """Check every dataset invariant and return the list of violations (empty when clean)."""
    v = []
    n = ds.features.shape[0] if ds.features.ndim == 2 else -1
    if ds.features.ndim != 2:
        v.append(f"features must be a matrix, got shape {ds.features.shape}")
        return v
    if ds.labels.shape != (n,):
        v.append(f"labels length {ds.labels.shape} does not match {n} feature rows")
        return v
    if not np.all(np.isfinite(ds.features)):
        v.append("features contain non-finite values")
    elif ds.features.size and ds.features.min() < 0:
        v.append("features contain negative entries")
    if not np.all(np.isfinite(ds.attributes)):
        v.append("attributes contain non-finite values")

    seen, unseen = set(ds.seen_classes.tolist()), set(ds.unseen_classes.tolist())
    if len(seen) != len(ds.seen_classes):
        v.append("seen_classes contains duplicates")
    if len(unseen) != len(ds.unseen_classes):
        v.append("unseen_classes contains duplicates")
    overlap = sorted(seen & unseen)
    if overlap:
        v.append(f"seen_classes and unseen_classes overlap on {overlap}")
    n_attr = ds.attributes.shape[0]
    for c in sorted(seen | unseen):
        if c < 0 or c >= n_attr:
            v.append(f"missing attribute row for class {c}")

    def check_indices(name, idx, allowed, kind):
        if idx.size == 0:
            return
        if idx.min() < 0 or idx.max() >= n:
            v.append(f"{name} has indices outside [0, {n})")
            return
        if len(np.unique(idx)) != idx.size:
            v.append(f"{name} contains duplicate indices")
        bad = sorted(set(ds.labels[idx].tolist()) - allowed)
        if bad:
            v.append(f"{name} contains labels {bad} that are not {kind} classes")

    check_indices("train_idx", ds.train_idx, seen, "seen")
    check_indices("test_seen_idx", ds.test_seen_idx, seen, "seen")
    check_indices("test_unseen_idx", ds.test_unseen_idx, unseen, "unseen")
    shared = np.intersect1d(ds.train_idx, ds.test_seen_idx)
    if shared.size:
        v.append(f"train_idx and test_seen_idx share {shared.size} indices")
    return v


# ----------------------------------------------------------------- synthetic


@dataclass
class SyntheticSpec:
    k: int = 8
    l: int = 4  # noqa: E741
    d_a: int = 8
    d_x: int = 16
    train_per_class: int = 100
    test_per_class: int = 50
    sigma: float = 0.05
    seed: int = 0

    def check(self):
        if self.k < 2:
            raise ConfigError(f"synthetic spec needs k >= 2 seen classes, got {self.k}")
        if self.l < 2:
            raise ConfigError(f"synthetic spec needs l >= 2 unseen classes, got {self.l}")
        if self.d_a < 1 or self.d_x < 1:
            raise ConfigError("synthetic spec needs positive d_a and d_x")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ConfigError("synthetic spec needs at least one train and test sample per class")
        if not self.sigma > 0:
            raise ConfigError(f"synthetic spec needs sigma > 0, got {self.sigma}")


def synthetic_class_means(spec):
    """Attributes and true class means; shared by :func:`make_synthetic` and tests."""
    rng = np.random.default_rng([spec.seed, 0])
    n_cls = spec.k + spec.l
    attributes = np.abs(rng.standard_normal((n_cls, spec.d_a)))
    mixing = rng.standard_normal((spec.d_x, spec.d_a)) / np.sqrt(spec.d_a)
    means = np.maximum(attributes @ mixing.T, 0.0)
    return attributes, means


def make_synthetic(spec=None):
    """Clustered features whose class means are a rectified linear map of the attributes.

    Classes ``0..k-1`` are seen and ``k..k+l-1`` unseen.  Seen classes get
    ``train_per_class`` training rows and ``test_per_class`` test rows;
    unseen classes only test rows.
    """
    spec = spec or SyntheticSpec()
    spec.check()
    attributes, means = synthetic_class_means(spec)
    rng = np.random.default_rng([spec.seed, 1])
    feats, labels, train, test_seen, test_unseen = [], [], [], [], []
    row = 0
    for c in range(spec.k + spec.l):
        seen = c < spec.k
        count = spec.test_per_class + (spec.train_per_class if seen else 0)
        mu = means[c]
        noise = rng.standard_normal((count, spec.d_x))
        x = np.maximum(mu + spec.sigma * np.linalg.norm(mu) * noise / np.sqrt(spec.d_x), 0.0)
        feats.append(x)
        labels.append(np.full(count, c))
        ids = np.arange(row, row + count)
        if seen:
            train.append(ids[:spec.train_per_class])
            test_seen.append(ids[spec.train_per_class:])
        else:
            test_unseen.append(ids)
        row += count
    ds = Dataset(
        features=np.concatenate(feats),
        labels=np.concatenate(labels),
        attributes=attributes,
        seen_classes=np.arange(spec.k),
        unseen_classes=np.arange(spec.k, spec.k + spec.l),
        train_idx=np.concatenate(train),
        test_unseen_idx=np.concatenate(test_unseen),
        test_seen_idx=np.concatenate(test_seen),
    )
    ds.fingerprint = ds.compute_fingerprint()
    return ds
