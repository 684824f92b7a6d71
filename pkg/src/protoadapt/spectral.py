"""Sparse symmetric matrices, the normalized graph Laplacian and a block CG solver.

The smoothing system ``(I + lam * L) Z = Z0`` is symmetric positive definite
whenever ``L`` is a normalized Laplacian and ``lam >= 0``; its spectrum lies
in ``[1, 1 + 2 * lam]`` so plain (unpreconditioned) CG converges quickly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse

from .errors import InvalidRHS, IsolatedNode, NotNormalized, SingularMatrix

UNIT_TOL = 1e-6
STORED_ZERO = 1e-15
DENSE_LIMIT = 2000


@dataclass(frozen=True)
class SparseSym:
    """Symmetric sparse matrix in compressed-row layout.

    Attributes
    ----------
    dim : int
        Number of rows (and columns).
    row_offsets : ndarray of int64, shape (dim + 1,)
    col_indices : ndarray of int64, shape (nnz,)
        Strictly increasing within each row.
    values : ndarray of float64, shape (nnz,)
    """

    dim: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[self.dim])

    def rows(self) -> np.ndarray:
        """Row index of every stored entry."""
        return np.repeat(np.arange(self.dim), np.diff(self.row_offsets))

    def diagonal(self) -> np.ndarray:
        d = np.zeros(self.dim)
        r = self.rows()
        on = r == self.col_indices
        d[r[on]] = self.values[on]
        return d

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.rows(), weights=self.values, minlength=self.dim)

    def to_scipy(self) -> scipy.sparse.csr_matrix:
        return scipy.sparse.csr_matrix(
            (self.values, self.col_indices, self.row_offsets), shape=(self.dim, self.dim)
        )

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        out[self.rows(), self.col_indices] = self.values
        return out

    def matmat(self, X) -> np.ndarray:
        """Product with a dense vector or (dim, K) block, touching only stored entries."""
        return self.to_scipy() @ np.asarray(X, dtype=np.float64)

    @classmethod
    def from_dense(cls, A, drop: float = STORED_ZERO) -> "SparseSym":
        """Compress a dense symmetric matrix, dropping entries with ``|a| < drop``."""
        A = np.asarray(A, dtype=np.float64)
        return cls._from_mask(A, np.abs(A) >= drop)

    @classmethod
    def _from_mask(cls, A: np.ndarray, mask: np.ndarray) -> "SparseSym":
        m = A.shape[0]
        r, c = np.nonzero(mask)  # C order: row-major, columns ascending
        offsets = np.zeros(m + 1, dtype=np.int64)
        np.cumsum(np.bincount(r, minlength=m), out=offsets[1:])
        return cls(m, offsets, c.astype(np.int64), A[r, c].copy())


@dataclass
class SolveReport:
    iterations_per_column: np.ndarray
    converged: np.ndarray
    max_residual: float


def _check_unit_rows(U: np.ndarray) -> None:
    norms = np.linalg.norm(U, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_TOL)
    if bad.size:
        raise NotNormalized(f"row {bad[0]} has norm {norms[bad[0]]:.9g}")


def affinity_from_gram(G, gamma: float, active=None) -> SparseSym:
    """Threshold a precomputed Gram matrix of unit rows into the affinity matrix.

    Entries with similarity ``>= gamma`` are kept; the diagonal is set to
    exactly 1 and always kept. ``G`` is not modified.

    ``active`` optionally lists the (increasing) rows of ``G`` that take part;
    the result is then the affinity of that sub-matrix, built without
    gathering it.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    G = np.asarray(G, dtype=np.float64)
    n = G.shape[0]
    mask = G >= gamma
    # below-threshold entries are absent, never stored as zeros
    if gamma < STORED_ZERO:
        mask &= np.abs(G) >= STORED_ZERO
    if active is None:
        mask.flat[:: n + 1] = True
        pos = None
        m = n
    else:
        active = np.asarray(active, dtype=np.int64)
        keep = np.zeros(n, dtype=bool)
        keep[active] = True
        mask &= keep[:, None]
        mask &= keep[None, :]
        mask.flat[active * (n + 1)] = True
        pos = np.full(n, -1, dtype=np.int64)
        pos[active] = np.arange(active.size)
        m = active.size
    flat = np.flatnonzero(mask)
    r, c = np.divmod(flat, n)
    vals = G.ravel()[flat] if G.flags.c_contiguous else G[r, c]
    vals[r == c] = 1.0
    if pos is not None:
        r, c = pos[r], pos[c]
    offsets = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=m), out=offsets[1:])
    return SparseSym(m, offsets, c, vals)


def build_affinity(U, gamma: float) -> SparseSym:
    """Thresholded cosine affinity between the unit rows of ``U``."""
    U = np.asarray(U, dtype=np.float64)
    _check_unit_rows(U)
    G = U @ U.T
    # exact symmetry regardless of BLAS blocking
    G = 0.5 * (G + G.T)
    return affinity_from_gram(G, gamma)


def normalized_laplacian(A_hat: SparseSym) -> SparseSym:
    """``I - D^{-1/2} A_hat D^{-1/2}`` with ``D`` the row sums of ``A_hat``."""
    deg = A_hat.row_sums()
    if np.any(deg <= 0.0):
        raise IsolatedNode(f"node {int(np.argmin(deg))} has non-positive degree")
    inv_sqrt = 1.0 / np.sqrt(deg)
    rows = A_hat.rows()
    cols = A_hat.col_indices
    vals = -A_hat.values * inv_sqrt[rows] * inv_sqrt[cols]
    on_diag = rows == cols
    vals[on_diag] += 1.0

    # diagonal may be missing from A_hat in hand-built inputs; add it there
    has_diag = np.zeros(A_hat.dim, dtype=bool)
    has_diag[rows[on_diag]] = True
    missing = np.flatnonzero(~has_diag)
    if missing.size:
        rows = np.concatenate([rows, missing])
        cols = np.concatenate([cols, missing])
        vals = np.concatenate([vals, np.ones(missing.size)])
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]

    keep = np.abs(vals) >= STORED_ZERO
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    offsets = np.zeros(A_hat.dim + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=A_hat.dim), out=offsets[1:])
    return SparseSym(A_hat.dim, offsets, cols.astype(np.int64), vals)


def _coldot(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    # contiguous per-column reduction: same summation order whatever the block width
    return np.ascontiguousarray((A * B).T).sum(axis=1)


def cg_solve(
    L: SparseSym,
    lambda_reg: float,
    Z0,
    tol: float = 1e-6,
    max_iter: int = 100,
) -> tuple[np.ndarray, SolveReport]:
    """Solve ``(I + lambda_reg * L) X = Z0`` column by column with conjugate gradient.

    All columns advance together as one block, but every scalar (step size,
    direction update, convergence test) is per column, so each column's
    iterates are exactly those of an independent single-column solve. A
    column stops once ``||r||_2 <= tol * ||b||_2``. The initial guess is
    ``Z0`` itself.

    Returns
    -------
    X : ndarray, shape (M, K)
    report : SolveReport
    """
    B = np.array(Z0, dtype=np.float64)
    squeeze = B.ndim == 1
    if squeeze:
        B = B[:, None]
    if not np.all(np.isfinite(B)):
        raise InvalidRHS("right-hand side contains non-finite values")
    if lambda_reg < 0:
        raise ValueError(f"lambda_reg must be >= 0, got {lambda_reg}")
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    m, k = B.shape
    if m != L.dim:
        raise ValueError(f"system has {L.dim} rows but Z0 has {m}")

    Ls = L.to_scipy()

    def apply(X):
        return X + lambda_reg * (Ls @ X)

    X = B.copy()
    iters = np.zeros(k, dtype=np.int64)
    bnorm = np.linalg.norm(B, axis=0)
    thresh = tol * bnorm
    if lambda_reg == 0.0:
        return X[:, 0] if squeeze else X, SolveReport(iters, np.ones(k, dtype=bool), 0.0)

    R = B - apply(X)
    rr = _coldot(R, R)
    active = np.sqrt(rr) > thresh
    P = R.copy()
    alpha = np.zeros(k)
    beta = np.zeros(k)
    for _ in range(max_iter):
        if not active.any():
            break
        # frozen columns get zero step sizes, which leaves X and R bit-identical
        Q = apply(P)
        pq = _coldot(P, Q)
        alpha[:] = 0.0
        np.divide(rr, pq, out=alpha, where=active)
        X += alpha * P
        R -= alpha * Q
        rr_new = _coldot(R, R)
        beta[:] = 0.0
        np.divide(rr_new, rr, out=beta, where=active)
        P = R + beta * P
        rr = np.where(active, rr_new, rr)
        iters += active
        active &= np.sqrt(rr) > thresh

    # report true residuals, not the recurrence
    res = np.linalg.norm(B - apply(X), axis=0)
    converged = res <= thresh
    report = SolveReport(iters, converged, float(res.max()) if k else 0.0)
    return (X[:, 0] if squeeze else X), report


def direct_solve_oracle(L, lambda_reg: float, Z0) -> np.ndarray:
    """Dense reference solve of ``(I + lambda_reg * L) X = Z0`` by Cholesky."""
    if isinstance(L, SparseSym):
        L = L.to_dense()
    L = np.asarray(L, dtype=np.float64)
    m = L.shape[0]
    if m > DENSE_LIMIT:
        raise ValueError(f"dense oracle limited to M <= {DENSE_LIMIT}, got {m}")
    Z0 = np.asarray(Z0, dtype=np.float64)
    if lambda_reg == 0.0:
        return Z0.copy()
    S = np.eye(m) + lambda_reg * L
    try:
        factor = scipy.linalg.cho_factor(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(str(exc)) from exc
    return scipy.linalg.cho_solve(factor, Z0)
