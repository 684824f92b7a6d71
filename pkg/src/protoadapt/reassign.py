"""Prototype reassignment: graph smoothing of soft pseudo-labels, then hardening."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidLabels
from .spectral import (
    SolveReport,
    affinity_from_gram,
    build_affinity,
    cg_solve,
    normalized_laplacian,
)


@dataclass(frozen=True)
class CGConfig:
    tol: float = 1e-6
    max_iter: int = 100


@dataclass(frozen=True)
class HardLabels:
    assignment: np.ndarray
    onehot: np.ndarray

    @classmethod
    def from_assignment(cls, assignment, num_classes: int) -> "HardLabels":
        assignment = np.asarray(assignment, dtype=np.int64)
        onehot = np.zeros((assignment.size, num_classes))
        onehot[np.arange(assignment.size), assignment] = 1.0
        return cls(assignment, onehot)


def smooth_labels(
    U,
    Z0,
    gamma: float,
    lambda_reg: float,
    cg: CGConfig = CGConfig(),
    gram=None,
    active=None,
) -> tuple[np.ndarray, SolveReport]:
    """Refine soft labels over the prototype similarity graph.

    Solves ``(I + lambda_reg * L_norm) Z = Z0`` where ``L_norm`` is the
    normalized Laplacian of the ``gamma``-thresholded cosine affinity of
    ``U``. ``gram`` may carry a precomputed Gram matrix of ``U``, or a larger
    one of which ``U`` occupies rows ``active``.
    """
    Z0 = np.asarray(Z0, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    if U.shape[0] != Z0.shape[0]:
        raise ValueError(f"{U.shape[0]} prototypes but {Z0.shape[0]} label rows")
    if lambda_reg == 0.0:
        k = Z0.shape[1]
        return Z0.copy(), SolveReport(np.zeros(k, dtype=np.int64), np.ones(k, dtype=bool), 0.0)
    A_hat = build_affinity(U, gamma) if gram is None else affinity_from_gram(gram, gamma, active)
    L = normalized_laplacian(A_hat)
    return cg_solve(L, lambda_reg, Z0, tol=cg.tol, max_iter=cg.max_iter)


def harden(Zstar) -> HardLabels:
    """One-hot of each row's maximum; ties go to the lowest class index."""
    Zstar = np.asarray(Zstar, dtype=np.float64)
    if Zstar.ndim != 2 or Zstar.shape[0] < 1:
        raise InvalidLabels(f"expected a non-empty (M, K) matrix, got shape {Zstar.shape}")
    if not np.all(np.isfinite(Zstar)):
        raise InvalidLabels("label matrix contains non-finite entries")
    return HardLabels.from_assignment(np.argmax(Zstar, axis=1), Zstar.shape[1])


def reassignment_flips(hard: HardLabels, origin_class) -> int:
    origin_class = np.asarray(origin_class)
    if origin_class.shape != hard.assignment.shape:
        raise ValueError("assignment and origin arrays differ in length")
    return int(np.count_nonzero(hard.assignment != origin_class))
