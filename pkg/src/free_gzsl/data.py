"""GZSL dataset bundles: container, synthetic benchmark, GZB1 and CSV I/O."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"GZB1"
VERSION = 1
_HEADER = struct.Struct("<10I")


class BundleError(ValueError):
    """Base class for bundle file errors; ``code`` names the failure."""

    code = "BUNDLE_ERROR"

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = violations or []


class BadMagic(BundleError):
    code = "BAD_MAGIC"


class BadVersion(BundleError):
    code = "BAD_VERSION"


class Truncated(BundleError):
    code = "TRUNCATED"


class TrailingBytes(BundleError):
    code = "TRAILING_BYTES"


class InvariantViolation(BundleError):
    code = "INVARIANT_VIOLATION"


@dataclass(frozen=True)
class DatasetBundle:
    features: np.ndarray  # [M_total, feat_dim] float32
    labels: np.ndarray  # [M_total] int64
    attributes: np.ndarray  # [n_classes, attr_dim] float32, row j is a_j
    seen_classes: np.ndarray
    unseen_classes: np.ndarray
    train_idx: np.ndarray
    test_seen_idx: np.ndarray
    test_unseen_idx: np.ndarray
    name: str = ""

    @property
    def feat_dim(self) -> int:
        return self.features.shape[1]

    @property
    def attr_dim(self) -> int:
        return self.attributes.shape[1]

    @property
    def n_classes(self) -> int:
        return self.attributes.shape[0]

    def summary(self) -> dict:
        return {
            "name": self.name,
            "samples": int(self.features.shape[0]),
            "feat_dim": self.feat_dim,
            "attr_dim": self.attr_dim,
            "n_classes": self.n_classes,
            "n_seen": int(len(self.seen_classes)),
            "n_unseen": int(len(self.unseen_classes)),
            "train": int(len(self.train_idx)),
            "test_seen": int(len(self.test_seen_idx)),
            "test_unseen": int(len(self.test_unseen_idx)),
        }


def bundles_equal(a: DatasetBundle, b: DatasetBundle) -> bool:
    arrays = ("features", "labels", "attributes", "seen_classes", "unseen_classes",
              "train_idx", "test_seen_idx", "test_unseen_idx")
    for f in arrays:
        x, y = getattr(a, f), getattr(b, f)
        if x.shape != y.shape or x.tobytes() != y.tobytes():
            return False
    return a.name == b.name


def make_bundle(features, labels, attributes, seen, unseen, train_idx, test_seen_idx,
                test_unseen_idx, name="") -> DatasetBundle:
    """Normalize dtypes (float32 tensors, int64 ids) and build a bundle."""
    return DatasetBundle(
        features=np.ascontiguousarray(features, dtype=np.float32),
        labels=np.asarray(labels, dtype=np.int64),
        attributes=np.ascontiguousarray(attributes, dtype=np.float32),
        seen_classes=np.asarray(seen, dtype=np.int64),
        unseen_classes=np.asarray(unseen, dtype=np.int64),
        train_idx=np.asarray(train_idx, dtype=np.int64),
        test_seen_idx=np.asarray(test_seen_idx, dtype=np.int64),
        test_unseen_idx=np.asarray(test_unseen_idx, dtype=np.int64),
        name=name,
    )


def validate_bundle(b: DatasetBundle) -> list[str]:
    """List every broken bundle invariant; empty means valid.  Never raises."""
    out = []
    m = b.features.shape[0] if b.features.ndim == 2 else -1
    if b.features.ndim != 2:
        out.append(f"features: expected a matrix, got shape {b.features.shape}")
    if b.labels.shape != (max(m, 0),):
        out.append(f"labels: expected {m} entries, got shape {b.labels.shape}")
    if b.attributes.ndim != 2:
        out.append(f"attributes: expected a matrix, got shape {b.attributes.shape}")
        return out
    n_classes = b.attributes.shape[0]
    if not np.all(np.isfinite(b.features)) or not np.all(np.isfinite(b.attributes)):
        out.append("finite: features or attributes contain NaN/Inf")

    seen, unseen = set(b.seen_classes.tolist()), set(b.unseen_classes.tolist())
    if len(seen) != len(b.seen_classes) or len(unseen) != len(b.unseen_classes):
        out.append("class lists: duplicate class ids")
    overlap = sorted(seen & unseen)
    if overlap:
        out.append(f"seen/unseen disjoint: ids {overlap} are both seen and unseen")
    missing = sorted(c for c in seen | unseen if not 0 <= c < n_classes)
    if missing:
        out.append(f"attribute rows: classes {missing} have no attribute row")
    bad_labels = sorted(set(int(c) for c in b.labels if not 0 <= c < n_classes))
    if bad_labels:
        out.append(f"attribute rows: labels {bad_labels} have no attribute row")

    splits = {"train_idx": b.train_idx, "test_seen_idx": b.test_seen_idx,
              "test_unseen_idx": b.test_unseen_idx}
    for nm, idx in splits.items():
        oob = idx[(idx < 0) | (idx >= m)]
        if oob.size:
            out.append(f"{nm} bounds: indices {sorted(oob.tolist())[:10]} outside [0, {m})")
        if len(np.unique(idx)) != len(idx):
            out.append(f"{nm}: duplicate indices")
    names = list(splits)
    for i in range(3):
        for j in range(i + 1, 3):
            common = np.intersect1d(splits[names[i]], splits[names[j]])
            if common.size:
                out.append(f"split disjointness: {names[i]} and {names[j]} share indices "
                           f"{common[:10].tolist()}")
    if out:
        return out

    for nm, allowed, kind in (("train_idx", seen, "seen"), ("test_seen_idx", seen, "seen"),
                              ("test_unseen_idx", unseen, "unseen")):
        wrong = sorted(set(int(c) for c in b.labels[splits[nm]]) - allowed)
        if wrong:
            out.append(f"{nm} labels: classes {wrong} are not {kind}")
    return out


def check_bundle(b: DatasetBundle) -> DatasetBundle:
    violations = validate_bundle(b)
    if violations:
        raise InvariantViolation("; ".join(violations), violations)
    return b


# -- synthetic benchmark -------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    n_seen: int = 8
    n_unseen: int = 4
    feat_dim: int = 64
    attr_dim: int = 16
    samples_per_class: int = 60
    noise: float = 0.1
    mixing_seed: int = 0

    def __post_init__(self):
        for f in ("n_seen", "n_unseen", "feat_dim", "attr_dim", "samples_per_class"):
            if getattr(self, f) <= 0:
                raise ValueError(f"SyntheticSpec.{f} must be positive")
        if self.noise < 0:
            raise ValueError("SyntheticSpec.noise must be non-negative")
        if self.attr_dim > self.feat_dim:
            raise ValueError("SyntheticSpec.attr_dim must not exceed feat_dim")


def mixing_matrix(spec: SyntheticSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.mixing_seed, 0x4D4958])
    return rng.standard_normal((spec.feat_dim, spec.attr_dim)) / np.sqrt(spec.attr_dim)


def generate_synthetic_bundle(spec: SyntheticSpec, seed: int, name="synthetic") -> DatasetBundle:
    """Linear-Gaussian GZSL benchmark: x = W a_c + noise * eps."""
    rng = np.random.default_rng([seed, 0x44415441])
    n_classes = spec.n_seen + spec.n_unseen
    attributes = rng.uniform(0.0, 1.0, size=(n_classes, spec.attr_dim))
    order = rng.permutation(n_classes)
    seen = np.sort(order[:spec.n_seen])
    unseen = np.sort(order[spec.n_seen:])
    w = mixing_matrix(spec)

    per = spec.samples_per_class
    labels = np.repeat(np.arange(n_classes), per)
    eps = rng.standard_normal((labels.size, spec.feat_dim))
    features = attributes[labels] @ w.T + spec.noise * eps

    n_train = int(round(0.7 * per))
    train, test_seen, test_unseen = [], [], []
    for c in range(n_classes):
        idx = np.arange(c * per, (c + 1) * per)
        if c in unseen:
            test_unseen.append(idx)
        else:
            idx = rng.permutation(idx)
            train.append(np.sort(idx[:n_train]))
            test_seen.append(np.sort(idx[n_train:]))
    return make_bundle(features, labels, attributes, seen, unseen, np.concatenate(train),
                       np.concatenate(test_seen), np.concatenate(test_unseen), name=name)


# -- GZB1 container ------------------------------------------------------------


def save_bundle(bundle: DatasetBundle, path) -> None:
    b = bundle
    header = _HEADER.pack(VERSION, b.features.shape[0], b.feat_dim, b.n_classes, b.attr_dim,
                          len(b.seen_classes), len(b.unseen_classes), len(b.train_idx),
                          len(b.test_seen_idx), len(b.test_unseen_idx))
    u32 = lambda a: np.ascontiguousarray(a, dtype="<u4").tobytes()  # noqa: E731
    f32 = lambda a: np.ascontiguousarray(a, dtype="<f4").tobytes()  # noqa: E731
    name = b.name.encode("utf-8")
    blob = b"".join([MAGIC, header, u32(b.seen_classes), u32(b.unseen_classes), f32(b.attributes),
                     u32(b.labels), f32(b.features), u32(b.train_idx), u32(b.test_seen_idx),
                     u32(b.test_unseen_idx), struct.pack("<I", len(name)), name])
    Path(path).write_bytes(blob)


def load_bundle(path) -> DatasetBundle:
    """Read a GZB1 file.  The trailing name record is optional."""
    buf = Path(path).read_bytes()
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic(f"{path}: bad magic {buf[:4]!r}")
    pos = 4

    def take(nbytes):
        nonlocal pos
        if pos + nbytes > len(buf):
            raise Truncated(f"{path}: truncated at byte {len(buf)}, needed {pos + nbytes}")
        out = buf[pos:pos + nbytes]
        pos += nbytes
        return out

    (version, m, feat_dim, n_classes, attr_dim, n_seen, n_unseen, n_train, n_ts,
     n_tu) = _HEADER.unpack(take(_HEADER.size))
    if version != VERSION:
        raise BadVersion(f"{path}: unsupported version {version}")
    u32 = lambda n: np.frombuffer(take(4 * n), dtype="<u4").astype(np.int64)  # noqa: E731
    f32 = lambda *s: np.frombuffer(take(4 * int(np.prod(s))), dtype="<f4").reshape(s).astype(np.float32)  # noqa: E731
    seen = u32(n_seen)
    unseen = u32(n_unseen)
    attributes = f32(n_classes, attr_dim)
    labels = u32(m)
    features = f32(m, feat_dim)
    train, ts, tu = u32(n_train), u32(n_ts), u32(n_tu)
    name = ""
    if pos < len(buf):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
    if pos != len(buf):
        raise TrailingBytes(f"{path}: {len(buf) - pos} unexpected trailing bytes")
    return check_bundle(make_bundle(features, labels, attributes, seen, unseen, train, ts, tu, name))


# -- CSV import ------------------------------------------------------------------


def _read_matrix(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    return np.array(rows, dtype=np.float64)


def load_csv_bundle(directory, name=None) -> DatasetBundle:
    """Build a bundle from features.csv, labels.csv, attributes.csv, splits.csv.

    ``splits.csv`` has a header ``index,split`` with split one of ``train``,
    ``test_seen``, ``test_unseen``.  Seen classes are those labelled in train
    or test_seen rows, unseen classes those in test_unseen rows.
    """
    d = Path(directory)
    features = _read_matrix(d / "features.csv")
    labels = _read_matrix(d / "labels.csv").reshape(-1).astype(np.int64)
    attributes = _read_matrix(d / "attributes.csv")
    splits = {"train": [], "test_seen": [], "test_unseen": []}
    with open(d / "splits.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            key = row["split"].strip()
            if key not in splits:
                raise InvariantViolation(f"splits.csv: unknown split {key!r}")
            splits[key].append(int(row["index"]))
    idx = {k: np.array(v, dtype=np.int64) for k, v in splits.items()}
    labelled = lambda k: labels[idx[k][(idx[k] >= 0) & (idx[k] < len(labels))]]  # noqa: E731
    seen = np.unique(np.concatenate([labelled("train"), labelled("test_seen")]))
    unseen = np.unique(labelled("test_unseen"))
    bundle = make_bundle(features, labels, attributes, seen, unseen, idx["train"], idx["test_seen"],
                         idx["test_unseen"], name=name if name is not None else d.name)
    return check_bundle(bundle)


# -- access audit --------------------------------------------------------------


@dataclass
class AccessLog:
    """Records which sample indices were read, tagged by purpose."""

    reads: list[tuple[str, np.ndarray]] = field(default_factory=list)

    def record(self, purpose: str, idx) -> None:
        self.reads.append((purpose, np.asarray(idx, dtype=np.int64).copy()))

    def indices(self, purpose_prefix: str) -> np.ndarray:
        hits = [i for p, i in self.reads if p.startswith(purpose_prefix)]
        return np.unique(np.concatenate(hits)) if hits else np.zeros(0, dtype=np.int64)


def read_features(bundle: DatasetBundle, idx, purpose: str, log: AccessLog | None = None) -> np.ndarray:
    if log is not None:
        log.record(purpose, idx)
    return bundle.features[idx]
