"""Online prototyping: a bounded, per-class cache of cluster centers.

Every class owns up to ``capacity`` prototype slots. A sample routed to class
``k`` opens a new slot while one is free; once the class is full, the nearest
prototype absorbs the sample through a confidence-weighted moving average
where confidence is ``exp(-beta * normalized_entropy)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateClassCount, DimMismatch, EmptyCache, EmptyClassCache
from .numerics import (
    norm_entropy,
    softmax,
    unit_normalize,
    unit_rows,
)

UNIT_TOL = 1e-6


@dataclass(frozen=True)
class ClassEmbeddings:
    """The fixed zero-shot classifier: ``K`` named unit rows in ``R^d``."""

    names: tuple[str, ...]
    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise DimMismatch(f"class embeddings must be a matrix, got shape {rows.shape}")
        if rows.shape[0] < 2:
            raise DegenerateClassCount(f"need at least 2 classes, got {rows.shape[0]}")
        if len(self.names) != rows.shape[0]:
            raise DimMismatch(f"{len(self.names)} names for {rows.shape[0]} rows")
        if len(set(self.names)) != len(self.names):
            raise ValueError("class names must be unique")
        norms = np.linalg.norm(rows, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            raise ValueError("class embedding rows must be unit-norm")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "names", tuple(self.names))

    @classmethod
    def from_rows(cls, rows, names=None, normalize: bool = False) -> "ClassEmbeddings":
        rows = np.asarray(rows, dtype=np.float64)
        if normalize:
            rows = unit_rows(rows)
        if names is None:
            names = [f"class_{i}" for i in range(rows.shape[0])]
        return cls(tuple(names), rows)

    @property
    def num_classes(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class Prototype:
    center: np.ndarray
    count: int


@dataclass(frozen=True)
class MainPrediction:
    scores: np.ndarray
    pseudo_class: int
    entropy: float


class InsertPolicy(str, enum.Enum):
    ALWAYS_FILL = "always-fill"
    NEAREST_IF_SIMILAR = "nearest-if-similar"


@dataclass(frozen=True)
class UpdateOutcome:
    inserted: bool
    index: int

    @property
    def updated(self) -> bool:
        return not self.inserted


@dataclass(frozen=True)
class Snapshot:
    """Immutable copy of the cache taken for one reassignment pass.

    Rows are ordered class-major, slot-minor. ``gram`` is the cache's
    slot-space Gram matrix and ``slots`` maps each row to its slot there.
    """

    U: np.ndarray
    origin_class: np.ndarray
    Z0: np.ndarray
    counts: np.ndarray
    gram: np.ndarray | None = field(default=None, repr=False)
    slots: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.U.shape[0]


def _check_dim(f: np.ndarray, d: int) -> None:
    if f.ndim != 1 or f.shape[0] != d:
        raise DimMismatch(f"feature has shape {f.shape}, expected ({d},)")


def predict_main(f, W: ClassEmbeddings, tau: float = 1.0) -> MainPrediction:
    """Zero-shot scores, pseudo-class and normalized entropy for one feature."""
    f = np.asarray(f, dtype=np.float64)
    _check_dim(f, W.dim)
    # rows and f are unit vectors, so the dot product is the cosine
    scores = W.rows @ f
    k = int(np.argmax(scores))
    return MainPrediction(scores, k, norm_entropy(softmax(scores, tau)))


class PrototypeCache:
    """Per-class prototype slots plus a slot-space Gram matrix.

    The Gram matrix holds ``<c_a, c_b>`` for every pair of occupied slots and
    is patched one row/column at a time as prototypes change, so stacking the
    prototypes never requires a full ``M x M x d`` product.
    """

    def __init__(self, num_classes: int, dim: int, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.num_classes = num_classes
        self.dim = dim
        self.capacity = capacity
        self.reset()

    def reset(self) -> None:
        K, N = self.num_classes, self.capacity
        self._centers = np.zeros((K * N, self.dim))
        self._counts = np.zeros(K * N, dtype=np.int64)
        self._sizes = np.zeros(K, dtype=np.int64)
        self._gram = np.zeros((K * N, K * N))

    def _slot(self, k: int, n: int) -> int:
        return k * self.capacity + n

    @property
    def sizes(self) -> np.ndarray:
        return self._sizes.copy()

    @property
    def total(self) -> int:
        return int(self._sizes.sum())

    def class_size(self, k: int) -> int:
        return int(self._sizes[k])

    def prototypes(self, k: int) -> list[Prototype]:
        base = self._slot(k, 0)
        return [
            Prototype(self._centers[base + n].copy(), int(self._counts[base + n]))
            for n in range(self._sizes[k])
        ]

    def centers(self, k: int) -> np.ndarray:
        base = self._slot(k, 0)
        return self._centers[base : base + self._sizes[k]].copy()

    def counts(self, k: int) -> np.ndarray:
        base = self._slot(k, 0)
        return self._counts[base : base + self._sizes[k]].copy()

    def _set_center(self, slot: int, c: np.ndarray) -> None:
        self._centers[slot] = c
        row = self._centers @ c
        self._gram[slot, :] = row
        self._gram[:, slot] = row
        self._gram[slot, slot] = 1.0

    def insert(self, k: int, f: np.ndarray, count: int = 1) -> int:
        n = int(self._sizes[k])
        if n >= self.capacity:
            raise ValueError(f"class {k} is full")
        self._set_center(self._slot(k, n), f)
        self._counts[self._slot(k, n)] = count
        self._sizes[k] += 1
        return n

    def replace(self, k: int, n: int, center: np.ndarray, count: int) -> None:
        slot = self._slot(k, n)
        self._set_center(slot, center)
        self._counts[slot] = count

    def remove(self, k: int, n: int) -> None:
        """Drop slot ``n`` of class ``k``, shifting later slots down."""
        size = int(self._sizes[k])
        base = self._slot(k, 0)
        for j in range(n, size - 1):
            self._centers[base + j] = self._centers[base + j + 1]
            self._counts[base + j] = self._counts[base + j + 1]
        last = base + size - 1
        self._centers[last] = 0.0
        self._counts[last] = 0
        self._sizes[k] -= 1
        self._gram = self._centers @ self._centers.T

    def active_slots(self) -> np.ndarray:
        N = self.capacity
        return np.concatenate(
            [np.arange(k * N, k * N + s) for k, s in enumerate(self._sizes)]
        ).astype(np.int64)

    def state(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Copies of (centers, counts, sizes) for equality checks and replay."""
        return self._centers.copy(), self._counts.copy(), self._sizes.copy()


def select_prototype(f, cache: PrototypeCache, k: int) -> int:
    """Index of the class-``k`` prototype most similar to ``f``; ties go low."""
    if cache.class_size(k) == 0:
        raise EmptyClassCache(f"class {k} has no prototypes")
    sims = cache.centers(k) @ np.asarray(f, dtype=np.float64)
    return int(np.argmax(sims))


def prototype_entropy(c: np.ndarray, W: ClassEmbeddings, tau: float) -> float:
    return norm_entropy(softmax(W.rows @ c, tau))


def merge_center(f, c_old, count: int, h_sample: float, h_proto: float, beta: float) -> np.ndarray:
    """Confidence-weighted moving average of a prototype and a new sample, renormalized."""
    a_t = np.exp(-beta * h_sample)
    a_p = np.exp(-beta * h_proto)
    # both weights can underflow together for huge beta; rescale by the larger exponent
    if a_t == 0.0 and a_p == 0.0:
        shift = min(h_sample, h_proto)
        a_t = np.exp(-beta * (h_sample - shift))
        a_p = np.exp(-beta * (h_proto - shift))
    c_new = (a_t * np.asarray(f) + count * a_p * np.asarray(c_old)) / (a_t + count * a_p)
    return unit_normalize(c_new)


def update_or_insert(
    cache: PrototypeCache,
    f,
    pred: MainPrediction,
    W: ClassEmbeddings,
    beta: float,
    tau: float = 1.0,
    policy: InsertPolicy | str = InsertPolicy.ALWAYS_FILL,
    merge_similarity: float = 0.9,
) -> UpdateOutcome:
    """Route ``f`` into the cache of its pseudo-class.

    With ``always-fill`` a free slot is always taken first. With
    ``nearest-if-similar`` the nearest prototype absorbs the sample whenever
    its cosine similarity reaches ``merge_similarity``, even if slots are free.
    """
    f = np.asarray(f, dtype=np.float64)
    k = pred.pseudo_class
    size = cache.class_size(k)
    policy = InsertPolicy(policy)

    if size < cache.capacity:
        if policy is InsertPolicy.ALWAYS_FILL or size == 0:
            return UpdateOutcome(True, cache.insert(k, f))
        n = select_prototype(f, cache, k)
        if cache.centers(k)[n] @ f < merge_similarity:
            return UpdateOutcome(True, cache.insert(k, f))
    else:
        n = select_prototype(f, cache, k)

    c_old = cache.centers(k)[n]
    b = int(cache.counts(k)[n])
    h_proto = prototype_entropy(c_old, W, tau)
    c_new = merge_center(f, c_old, b, pred.entropy, h_proto, beta)
    cache.replace(k, n, c_new, b + 1)
    return UpdateOutcome(False, n)


def snapshot(
    cache: PrototypeCache, W: ClassEmbeddings, tau: float = 1.0, copy_gram: bool = True
) -> Snapshot:
    """Stack the current prototypes with their soft zero-shot labels.

    With ``copy_gram=False`` the snapshot's ``gram`` is a read-only view of
    the live cache matrix, valid only until the cache next changes.
    """
    slots = cache.active_slots()
    if slots.size == 0:
        raise EmptyCache("no prototypes cached yet")
    U = cache._centers[slots].copy()
    origin = slots // cache.capacity
    Z0 = softmax(U @ W.rows.T, tau)
    gram = cache._gram.copy() if copy_gram else cache._gram.view()
    counts = cache._counts[slots].copy()
    for a in (U, origin, Z0, gram, counts, slots):
        a.setflags(write=False)
    return Snapshot(U, origin, Z0, counts, gram, slots)

