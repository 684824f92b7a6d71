"""Scalar and vector primitives shared by the engine.

Everything here is a pure function over float64 numpy arrays.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateClassCount, InvalidTemperature, ZeroNorm

ZERO_NORM_EPS = 1e-12
# probabilities below this contribute nothing to entropy
ENTROPY_FLOOR = 1e-300


def as_vector(v) -> np.ndarray:
    return np.asarray(v, dtype=np.float64)


def cosine_sim(a, b) -> float:
    """Cosine similarity of two nonzero vectors of equal length."""
    a = as_vector(a)
    b = as_vector(b)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < ZERO_NORM_EPS or nb < ZERO_NORM_EPS:
        raise ZeroNorm("cosine similarity of a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def softmax(s, tau: float = 1.0) -> np.ndarray:
    """Temperature softmax along the last axis.

    Works on a single logit vector or a matrix of row logits. The row
    maximum is subtracted before exponentiation.
    """
    if not tau > 0:
        raise InvalidTemperature(f"temperature must be positive, got {tau}")
    z = as_vector(s) / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def norm_entropy(p) -> float:
    """Shannon entropy of ``p`` divided by ``ln K``, clamped to [0, 1]."""
    p = as_vector(p)
    k = p.shape[-1]
    if k < 2:
        raise DegenerateClassCount(f"normalized entropy needs K >= 2, got {k}")
    mask = p > ENTROPY_FLOOR
    h = -np.sum(p[mask] * np.log(p[mask]))
    return float(min(max(h / np.log(k), 0.0), 1.0))


def norm_entropy_rows(P) -> np.ndarray:
    """Row-wise :func:`norm_entropy` for an (M, K) matrix."""
    P = as_vector(P)
    k = P.shape[-1]
    if k < 2:
        raise DegenerateClassCount(f"normalized entropy needs K >= 2, got {k}")
    safe = np.where(P > ENTROPY_FLOOR, P, 1.0)
    h = -np.sum(np.where(P > ENTROPY_FLOOR, P * np.log(safe), 0.0), axis=-1)
    return np.clip(h / np.log(k), 0.0, 1.0)


def unit_normalize(v) -> np.ndarray:
    v = as_vector(v)
    n = np.linalg.norm(v)
    if n < ZERO_NORM_EPS:
        raise ZeroNorm("cannot normalize a zero vector")
    return v / n


def unit_rows(X) -> np.ndarray:
    """Normalize each row of a matrix to unit length."""
    X = as_vector(X)
    n = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(n < ZERO_NORM_EPS):
        raise ZeroNorm("matrix has a zero row")
    return X / n


def argmax_first(v) -> int:
    """Index of the maximum; ties go to the lowest index."""
    return int(np.argmax(v))
