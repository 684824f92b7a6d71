"""Embedding containers and synthetic multi-modal streams.

Binary layouts (all little-endian):

* stream file: ``b"UAEB"``, u32 version (1), u32 d, u64 n, then n records of
  ``[i32 label (-1 = unknown), d x f32 feature]``.
* class file: ``b"UACL"``, u32 version (1), u32 d, u32 K, then K records of
  ``[u16 name_len, name bytes (UTF-8), d x f32 row]``.
* cache snapshot: a stream file whose labels are the prototypes' cache
  classes, followed by ``b"UACT"``, u64 M and M x u32 update counts.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np
import scipy.cluster.vq

from .errors import CannotSeparate, DimMismatch, FormatError, TruncatedFile
from .proto_cache import ClassEmbeddings, Snapshot

STREAM_MAGIC = b"UAEB"
CLASS_MAGIC = b"UACL"
COUNTS_MAGIC = b"UACT"
VERSION = 1
UNKNOWN = -1

_STREAM_HEADER = struct.Struct("<4sIIQ")
_CLASS_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class StreamRecord:
    feature: np.ndarray
    label: int | None


@dataclass
class Stream:
    """A labelled feature stream held as arrays; label -1 means unknown."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise DimMismatch(
                f"features {self.features.shape} and labels {self.labels.shape} disagree"
            )

    def __len__(self) -> int:
        return self.features.shape[0]

    def __iter__(self) -> Iterator[StreamRecord]:
        for f, y in zip(self.features, self.labels):
            yield StreamRecord(f, None if y == UNKNOWN else int(y))

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def labeled(self) -> bool:
        return bool(np.all(self.labels != UNKNOWN))


# ---------------------------------------------------------------------------
# synthesis


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic stream.

    Angles are in radians. With ``confidence_skew > 0`` mode 0 of every class
    sits ``1 + confidence_skew`` times closer to the class embedding and is
    drawn more often than each other mode (weight ``1 + TIGHT_WEIGHT_PER_SKEW
    * confidence_skew`` against 1), so it is the lowest-entropy mode.

    ``neighbour_fraction = 0`` points modes in random tangent directions at
    angle ``mode_spread``. A positive value aims off-mode ``m`` of class ``k``
    at class ``(k + m) mod K`` and places it that fraction of the way to the
    decision boundary between the two classes, capped at ``mode_spread``.
    Off-modes then straddle a class boundary while their centers stay on the
    correct side. The tight mode 0 leans away from every class embedding,
    tilted slightly toward the off-mode targets.
    """

    K: int
    d: int
    modes_per_class: int = 3
    mode_spread: float = 1.0
    sample_noise: float = 0.5
    n_samples: int = 1000
    confidence_skew: float = 0.0
    seed: int = 0
    neighbour_fraction: float = 0.0

    def validate(self) -> None:
        if self.K < 2 or self.d < 2:
            raise ValueError("need K >= 2 and d >= 2")
        if self.modes_per_class < 1:
            raise ValueError("modes_per_class must be >= 1")
        if self.mode_spread < 0 or self.sample_noise < 0 or self.confidence_skew < 0:
            raise ValueError("angles and skew must be non-negative")
        if self.n_samples < 0:
            raise ValueError("n_samples must be >= 0")
        if not 0.0 <= self.neighbour_fraction < 1.0:
            raise ValueError("neighbour_fraction must lie in [0, 1)")


def _tangent_unit(rng: np.random.Generator, x: np.ndarray) -> np.ndarray:
    """Uniform random unit vector orthogonal to the unit vector ``x``."""
    while True:
        g = rng.standard_normal(x.shape[0])
        g -= (g @ x) * x
        n = np.linalg.norm(g)
        if n > 1e-8:
            return g / n


def _rotate(x: np.ndarray, u: np.ndarray, angle: float) -> np.ndarray:
    v = np.cos(angle) * x + np.sin(angle) * u
    return v / np.linalg.norm(v)


def gen_class_embeddings(
    K: int, d: int, seed: int = 0, max_abs_cos: float = 0.3, budget: int = 100_000
) -> ClassEmbeddings:
    """Rejection-sample ``K`` unit vectors with pairwise ``|cos| <= max_abs_cos``."""
    if d < 2 or K < 2:
        raise ValueError("need K >= 2 and d >= 2")
    rng = np.random.default_rng(seed)
    rows: list[np.ndarray] = []
    draws = 0
    while len(rows) < K:
        if draws >= budget:
            raise CannotSeparate(
                f"placed {len(rows)} of {K} classes after {budget} draws; try a larger d"
            )
        draws += 1
        g = rng.standard_normal(d)
        g /= np.linalg.norm(g)
        if rows and np.max(np.abs(np.array(rows) @ g)) > max_abs_cos:
            continue
        rows.append(g)
    return ClassEmbeddings.from_rows(np.array(rows))


def _toward(w: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Unit tangent at ``w`` pointing along the great circle to ``target``."""
    u = target - (target @ w) * w
    return u / np.linalg.norm(u)


def _outside_span(rng: np.random.Generator, W: ClassEmbeddings) -> np.ndarray | None:
    """Random unit vector orthogonal to every class embedding, if one exists."""
    if W.dim <= W.num_classes:
        return None
    basis = np.linalg.qr(W.rows.T)[0]
    g = rng.standard_normal(W.dim)
    g -= basis @ (basis.T @ g)
    return g / np.linalg.norm(g)


def _neighbour_centers(W: ClassEmbeddings, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    K, modes = W.num_classes, spec.modes_per_class
    out = np.empty((K, modes, W.dim))
    for k, w in enumerate(W.rows):
        targets = [(k + m) % K for m in range(1, modes)]
        angles = []
        for m, j in enumerate(targets, start=1):
            if j == k:
                u, angle = _tangent_unit(rng, w), spec.mode_spread
            else:
                u = _toward(w, W.rows[j])
                # the bisector of w_k and w_j is half their angle away
                half = 0.5 * np.arccos(np.clip(W.rows[j] @ w, -1.0, 1.0))
                angle = min(spec.mode_spread, spec.neighbour_fraction * half)
            out[k, m] = _rotate(w, u, angle)
            angles.append(angle)

        # The tight mode leans off the span of the class embeddings, so it
        # does not move any zero-shot boundary, plus a small tilt toward the
        # off-mode targets that lets confident samples carry a little
        # information about the other modes.
        g = _outside_span(rng, W)
        u = _tangent_unit(rng, w) if g is None else g
        for j in targets:
            if j != k:
                u = u + TIGHT_TILT * _toward(w, W.rows[j])
        u -= (u @ w) * w
        u /= np.linalg.norm(u)
        base = angles[0] if angles else spec.mode_spread
        out[k, 0] = _rotate(w, u, base / (1.0 + spec.confidence_skew))
    return out


def mode_centers(W: ClassEmbeddings, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Per-class mode centers, shape (K, modes, d)."""
    if spec.neighbour_fraction > 0:
        return _neighbour_centers(W, spec, rng)
    out = np.empty((W.num_classes, spec.modes_per_class, W.dim))
    for k, w in enumerate(W.rows):
        for m in range(spec.modes_per_class):
            angle = spec.mode_spread
            if m == 0 and spec.confidence_skew > 0:
                angle /= 1.0 + spec.confidence_skew
            out[k, m] = _rotate(w, _tangent_unit(rng, w), angle) if angle > 0 else w
    return out


TIGHT_WEIGHT_PER_SKEW = 0.1
TIGHT_TILT = 0.1
_STREAM_KEY = 1


def mode_weights(spec: SynthSpec) -> np.ndarray:
    p = np.ones(spec.modes_per_class)
    p[0] += TIGHT_WEIGHT_PER_SKEW * spec.confidence_skew
    return p / p.sum()


def gen_stream(W: ClassEmbeddings, spec: SynthSpec) -> Stream:
    """Draw a shuffled, class-balanced stream of multi-modal unit features."""
    return gen_stream_with_modes(W, spec)[0]


def gen_stream_with_modes(W: ClassEmbeddings, spec: SynthSpec) -> tuple[Stream, np.ndarray]:
    """Like :func:`gen_stream` but also returns each record's mode index."""
    spec.validate()
    if spec.K != W.num_classes or spec.d != W.dim:
        raise DimMismatch(f"spec is K={spec.K}, d={spec.d}; embeddings are {W.rows.shape}")
    # A separate key keeps these draws independent of gen_class_embeddings(seed).
    rng = np.random.default_rng([spec.seed, _STREAM_KEY])
    centers = mode_centers(W, spec, rng)
    p_mode = mode_weights(spec)
    n, K = spec.n_samples, spec.K
    labels = np.concatenate(
        [np.repeat(np.arange(K), n // K), rng.choice(K, size=n % K, replace=False)]
    ).astype(np.int64)
    labels = labels[rng.permutation(n)]
    modes = rng.choice(spec.modes_per_class, size=n, p=p_mode)
    feats = np.empty((n, spec.d))
    for i in range(n):
        c = centers[labels[i], modes[i]]
        angle = spec.sample_noise * abs(rng.standard_normal())
        feats[i] = _rotate(c, _tangent_unit(rng, c), angle) if angle > 0 else c
    # the container stores f32; round once here so in-memory and on-disk streams agree
    return Stream(feats.astype(np.float32).astype(np.float64), labels), modes


def gen_prototype_graph(
    m: int, k: int, seed: int = 0, d: int = 16, clusters: int = 6, spread: float = 0.2
) -> tuple[np.ndarray, np.ndarray]:
    """Random clustered unit rows ``U`` (m, d) and row-stochastic labels ``Z0`` (m, k).

    Rows scatter around a few centers so that a 0.5 similarity threshold
    leaves a graph with real off-diagonal structure.
    """
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((clusters, d))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    U = centers[rng.integers(0, clusters, size=m)] + spread * rng.standard_normal((m, d))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    class_dirs = rng.standard_normal((k, d))
    class_dirs /= np.linalg.norm(class_dirs, axis=1, keepdims=True)
    logits = 5.0 * (U @ class_dirs.T)
    logits -= logits.max(axis=1, keepdims=True)
    Z0 = np.exp(logits)
    Z0 /= Z0.sum(axis=1, keepdims=True)
    return U, Z0


def angular_inertia(X: np.ndarray, assignment: np.ndarray, k: int) -> float:
    """Sum over points of ``1 - cos`` to their cluster's mean direction."""
    total = 0.0
    for c in range(k):
        pts = X[assignment == c]
        if len(pts):
            mean = pts.sum(axis=0)
            total += float(np.sum(1.0 - pts @ (mean / np.linalg.norm(mean))))
    return total


def inertia_gap(X, k: int, seed: int = 0, restarts: int = 10) -> float:
    """Ratio of 1-cluster to ``k``-cluster angular k-means inertia.

    The clustering is Euclidean k-means on the unit rows (which ranks points
    like cosine distance does), seeded with k-means++; the best of
    ``restarts`` runs is kept.
    """
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(seed)
    best = np.inf
    for _ in range(restarts):
        _, assignment = scipy.cluster.vq.kmeans2(X, k, minit="++", seed=rng)
        best = min(best, angular_inertia(X, assignment, k))
    return angular_inertia(X, np.zeros(len(X), dtype=int), 1) / best


# ---------------------------------------------------------------------------
# binary containers


def _record_dtype(d: int) -> np.dtype:
    return np.dtype([("label", "<i4"), ("feature", "<f4", (d,))])


def _open(path_or_file, mode: str):
    if isinstance(path_or_file, (str, Path)):
        return open(path_or_file, mode), True
    return path_or_file, False


def write_embeddings(path_or_file, stream: Stream) -> None:
    n, d = stream.features.shape
    recs = np.empty(n, dtype=_record_dtype(d))
    recs["label"] = stream.labels
    recs["feature"] = stream.features
    fh, own = _open(path_or_file, "wb")
    try:
        fh.write(_STREAM_HEADER.pack(STREAM_MAGIC, VERSION, d, n))
        fh.write(recs.tobytes())
    finally:
        if own:
            fh.close()


def _read_exact(fh: BinaryIO, size: int, what: str) -> bytes:
    data = fh.read(size)
    if len(data) != size:
        raise TruncatedFile(f"{what}: expected {size} bytes, got {len(data)}")
    return data


def _read_stream_body(fh: BinaryIO, expected_dim: int | None) -> Stream:
    head = fh.read(_STREAM_HEADER.size)
    if len(head) >= 4 and head[:4] != STREAM_MAGIC:
        raise FormatError(f"bad magic {head[:4]!r}, expected {STREAM_MAGIC!r}")
    if len(head) != _STREAM_HEADER.size:
        raise TruncatedFile("stream header is truncated")
    _, version, d, n = _STREAM_HEADER.unpack(head)
    if version != VERSION:
        raise FormatError(f"unsupported stream version {version}")
    if expected_dim is not None and d != expected_dim:
        raise DimMismatch(f"stream has d={d}, expected d={expected_dim}")
    dt = _record_dtype(d)
    body = _read_exact(fh, n * dt.itemsize, f"{n} records of d={d}")
    recs = np.frombuffer(body, dtype=dt)
    return Stream(recs["feature"].astype(np.float64), recs["label"].astype(np.int64))


def read_embeddings(path_or_file, expected_dim: int | None = None) -> Stream:
    """Read a binary stream file. Bytes after the last record are ignored."""
    fh, own = _open(path_or_file, "rb")
    try:
        return _read_stream_body(fh, expected_dim)
    finally:
        if own:
            fh.close()


def write_classes(path_or_file, W: ClassEmbeddings) -> None:
    fh, own = _open(path_or_file, "wb")
    try:
        fh.write(_CLASS_HEADER.pack(CLASS_MAGIC, VERSION, W.dim, W.num_classes))
        for name, row in zip(W.names, W.rows):
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(np.asarray(row, dtype="<f4").tobytes())
    finally:
        if own:
            fh.close()


def read_classes(path_or_file) -> ClassEmbeddings:
    fh, own = _open(path_or_file, "rb")
    try:
        head = fh.read(_CLASS_HEADER.size)
        if len(head) >= 4 and head[:4] != CLASS_MAGIC:
            raise FormatError(f"bad magic {head[:4]!r}, expected {CLASS_MAGIC!r}")
        if len(head) != _CLASS_HEADER.size:
            raise TruncatedFile("class header is truncated")
        _, version, d, K = _CLASS_HEADER.unpack(head)
        if version != VERSION:
            raise FormatError(f"unsupported class file version {version}")
        names, rows = [], np.empty((K, d))
        for i in range(K):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, f"class {i} name length"))
            names.append(_read_exact(fh, name_len, f"class {i} name").decode("utf-8"))
            rows[i] = np.frombuffer(_read_exact(fh, 4 * d, f"class {i} row"), dtype="<f4")
        return ClassEmbeddings(tuple(names), rows)
    finally:
        if own:
            fh.close()


def write_snapshot(path_or_file, snap: Snapshot) -> None:
    fh, own = _open(path_or_file, "wb")
    try:
        write_embeddings(fh, Stream(snap.U, snap.origin_class))
        counts = np.asarray(snap.counts, dtype="<u4")
        fh.write(COUNTS_MAGIC + struct.pack("<Q", counts.size) + counts.tobytes())
    finally:
        if own:
            fh.close()


def read_snapshot(path_or_file) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(U, origin_class, counts)`` from a cache snapshot file."""
    fh, own = _open(path_or_file, "rb")
    try:
        stream = _read_stream_body(fh, None)
        tail = _read_exact(fh, 12, "counts trailer header")
        if tail[:4] != COUNTS_MAGIC:
            raise FormatError(f"bad counts magic {tail[:4]!r}")
        (m,) = struct.unpack("<Q", tail[4:])
        if m != len(stream):
            raise DimMismatch(f"{m} counts for {len(stream)} prototypes")
        counts = np.frombuffer(_read_exact(fh, 4 * m, "counts"), dtype="<u4").astype(np.int64)
        return stream.features, stream.labels, counts
    finally:
        if own:
            fh.close()


# ---------------------------------------------------------------------------
# JSON lines


def read_jsonl(path_or_file, expected_dim: int | None = None) -> Stream:
    """Read ``{"label": int|null, "feature": [...]}`` objects, one per line."""
    if isinstance(path_or_file, (str, Path)):
        with open(path_or_file, "r", encoding="utf-8") as fh:
            return read_jsonl(fh, expected_dim)
    feats, labels = [], []
    d = expected_dim
    for lineno, line in enumerate(path_or_file, 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            feat = obj["feature"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"line {lineno}: {exc}") from exc
        if d is None:
            d = len(feat)
        if len(feat) != d:
            raise DimMismatch(f"line {lineno}: feature length {len(feat)}, expected {d}")
        label = obj.get("label")
        feats.append(feat)
        labels.append(UNKNOWN if label is None else int(label))
    return Stream(np.array(feats, dtype=np.float64).reshape(len(feats), d or 0), np.array(labels))


def write_jsonl(fh: io.TextIOBase, stream: Stream) -> None:
    for rec in stream:
        fh.write(json.dumps({"label": rec.label, "feature": rec.feature.tolist()}) + "\n")


def read_any(path, expected_dim: int | None = None) -> Stream:
    """Read a stream file, sniffing binary vs JSON lines from the first bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == STREAM_MAGIC:
        return read_embeddings(path, expected_dim)
    if head[:1] in (b"{", b" ", b"\n", b""):
        return read_jsonl(path, expected_dim)
    raise FormatError(f"{path}: bad magic {head!r}")
