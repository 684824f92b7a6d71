"""Cache logits and entropy-weighted fusion with the zero-shot logits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, EmptyCache
from .numerics import norm_entropy, softmax
from .reassign import HardLabels

BOTH_CERTAIN_EPS = 1e-12


@dataclass(frozen=True)
class ClassNormalizer:
    inv_counts: np.ndarray
    prototype_counts: np.ndarray


@dataclass(frozen=True)
class FusionWeights:
    h_main: float
    h_cache: float

    @property
    def main_weight(self) -> float:
        total = self.h_main + self.h_cache
        return 0.5 if total < BOTH_CERTAIN_EPS else self.h_cache / total

    @property
    def cache_weight(self) -> float:
        return 1.0 - self.main_weight


def class_normalizer(onehot) -> ClassNormalizer:
    """Per-class prototype counts and their reciprocals (0 for empty classes)."""
    if isinstance(onehot, HardLabels):
        onehot = onehot.onehot
    counts = np.rint(np.asarray(onehot).sum(axis=0)).astype(np.int64)
    inv = np.zeros(counts.shape)
    np.divide(1.0, counts, out=inv, where=counts > 0)
    return ClassNormalizer(inv, counts)


def cache_logits(U, onehot, norm: ClassNormalizer, f) -> np.ndarray:
    """Mean cosine similarity of ``f`` to the prototypes of each class.

    Classes without prototypes score 0.
    """
    if isinstance(onehot, HardLabels):
        onehot = onehot.onehot
    U = np.asarray(U, dtype=np.float64)
    if U.shape[0] == 0:
        raise EmptyCache("no prototypes to score against")
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (U.shape[1],):
        raise DimMismatch(f"feature has shape {f.shape}, prototypes have dim {U.shape[1]}")
    return norm.inv_counts * (np.asarray(onehot).T @ (U @ f))


def entropy_fuse(s_main, s_cache, tau: float = 1.0) -> tuple[np.ndarray, FusionWeights]:
    """Weight each logit vector by the *other* one's normalized entropy.

    The more certain source (lower entropy) gets the larger weight. When both
    entropies vanish the two vectors are averaged.
    """
    s_main = np.asarray(s_main, dtype=np.float64)
    s_cache = np.asarray(s_cache, dtype=np.float64)
    if s_main.shape != s_cache.shape:
        raise DimMismatch(f"logit shapes differ: {s_main.shape} vs {s_cache.shape}")
    h_t = norm_entropy(softmax(s_main, tau))
    h_c = norm_entropy(softmax(s_cache, tau))
    return fuse_with_entropies(s_main, s_cache, h_t, h_c), FusionWeights(h_t, h_c)


def fuse_with_entropies(s_main, s_cache, h_main: float, h_cache: float) -> np.ndarray:
    total = h_main + h_cache
    if total < BOTH_CERTAIN_EPS:
        return (np.asarray(s_main) + np.asarray(s_cache)) / 2.0
    return (h_cache * np.asarray(s_main) + h_main * np.asarray(s_cache)) / total
