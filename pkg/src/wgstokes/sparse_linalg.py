"""Sparse kernels: matrix-vector products, threshold incomplete Cholesky,
preconditioned conjugate gradients, and small dense eigensolvers.

Storage is scipy CSR; the incomplete factorization and the Krylov loops are
implemented here. Triangular factors are applied through a no-pivot sparse
LU object, which is an exact (and fast) way to run forward/backward
substitution with a triangular matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import cho_factor, cho_solve, eigh

__all__ = [
    "IndefiniteOperatorError",
    "ICholBreakdownError",
    "ICholFactor",
    "InnerSolveConfig",
    "InnerSolver",
    "PCGInfo",
    "spmv",
    "spmv_transpose",
    "ichol_threshold",
    "pcg",
    "dense_eig_sym",
    "dense_geig_sym",
    "write_matrix",
    "read_matrix",
]

DENSE_GUARD = 2000  # cubic-cost eigensolves are for verification scale only


class IndefiniteOperatorError(RuntimeError):
    """Raised when CG meets a direction of nonpositive curvature."""


class ICholBreakdownError(RuntimeError):
    pass


def spmv(a: sp.spmatrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if a.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {x.shape}")
    return a @ x


def spmv_transpose(a: sp.spmatrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if a.shape[0] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape}^T @ {x.shape}")
    return a.T @ x


@dataclass
class ICholFactor:
    """Lower-triangular incomplete factor with L L^T ~= A + shift*I."""

    L: sp.csr_matrix
    shift: float
    _lu: spla.SuperLU | None = field(default=None, repr=False)

    def _factor(self) -> spla.SuperLU:
        if self._lu is None:
            # natural ordering + no pivoting keeps the triangular structure,
            # so solve()/solve(trans) are plain forward/backward substitution
            self._lu = spla.splu(
                self.L.tocsc(), permc_spec="NATURAL", diag_pivot_thresh=0.0
            )
        return self._lu

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Apply (L L^T)^{-1}."""
        lu = self._factor()
        return lu.solve(lu.solve(b, trans="N"), trans="T")

    def solve_lower(self, b: np.ndarray) -> np.ndarray:
        return self._factor().solve(b, trans="N")

    def solve_upper(self, b: np.ndarray) -> np.ndarray:
        return self._factor().solve(b, trans="T")


def _ichol_attempt(
    a: sp.csr_matrix, droptol: float, shift: float
) -> ICholFactor | None:
    """Left-looking column incomplete Cholesky; None on pivot breakdown.

    Entry l_ij is dropped when |l_ij| < droptol * ||A row j||_2; diagonal
    entries are always kept.
    """
    n = a.shape[0]
    indptr, indices, data = a.indptr, a.indices, a.data
    rownorm = np.sqrt(np.add.reduceat(data**2, indptr[:-1], dtype=float))
    w = np.zeros(n)
    cols_idx: list[np.ndarray] = [np.empty(0, dtype=np.int64)] * n
    cols_val: list[np.ndarray] = [np.empty(0)] * n
    row_members: list[list[tuple[int, int]]] = [[] for _ in range(n)]

    for j in range(n):
        seg = slice(indptr[j], indptr[j + 1])
        cols_j = indices[seg]
        mask = cols_j >= j
        base_idx = cols_j[mask]
        w[base_idx] = data[seg][mask]
        w[j] += shift
        touched = [base_idx]
        for k, pos in row_members[j]:
            vjk = cols_val[k][pos]
            idxs = cols_idx[k][pos:]
            w[idxs] -= vjk * cols_val[k][pos:]
            touched.append(idxs)
        cand = np.unique(np.concatenate(touched)) if len(touched) > 1 else base_idx
        d = w[j]
        if d <= 0.0:
            w[cand] = 0.0
            return None
        ljj = math.sqrt(d)
        sub = cand[cand > j]
        vals_sub = w[sub] / ljj
        keep = np.abs(vals_sub) >= droptol * rownorm[j]
        kept_idx = sub[keep]
        cols_idx[j] = np.concatenate(([j], kept_idx))
        cols_val[j] = np.concatenate(([ljj], vals_sub[keep]))
        for pos, i in enumerate(kept_idx, start=1):
            row_members[int(i)].append((j, pos))
        w[cand] = 0.0

    col_of = np.repeat(np.arange(n), [len(c) for c in cols_idx])
    l = sp.coo_matrix(
        (np.concatenate(cols_val), (np.concatenate(cols_idx), col_of)),
        shape=(n, n),
    ).tocsr()
    return ICholFactor(L=l, shift=shift)


def ichol_threshold(a: sp.csr_matrix, droptol: float = 1e-3) -> ICholFactor:
    """Incomplete Cholesky with threshold dropping and shift-retry on breakdown."""
    a = sp.csr_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if (abs(a - a.T) > 1e-12 * max(1.0, abs(a).max())).nnz:
        raise ValueError("matrix must be symmetric")
    diag = a.diagonal()
    if np.any(diag <= 0):
        raise ValueError("matrix must have positive diagonal")
    shift = 0.0
    bump = 1e-3 * float(diag.mean())
    for _ in range(21):
        factor = _ichol_attempt(a, droptol, shift)
        if factor is not None:
            return factor
        shift = max(2.0 * shift, bump)
    raise ICholBreakdownError(
        f"incomplete factorization failed after 20 shift attempts (last {shift:.3e})"
    )


@dataclass
class PCGInfo:
    iterations: int
    converged: bool
    residuals: list[float]  # true 2-norm relative residuals, [0] for the initial guess


@dataclass
class InnerSolveConfig:
    """How to apply the inverse of the velocity stiffness block."""

    method: str = "auto"  # auto | pcg | dense_cholesky
    rel_tol: float = 1e-10
    max_iterations: int = 500
    ichol_droptol: float = 1e-3
    dense_cutoff: int = DENSE_GUARD

    def __post_init__(self):
        if not 0.0 < self.rel_tol < 1.0:
            raise ValueError("rel_tol must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def pcg(
    a,
    b: np.ndarray,
    m: ICholFactor | None = None,
    rel_tol: float = 1e-10,
    max_iterations: int = 500,
) -> tuple[np.ndarray, PCGInfo]:
    """Conjugate gradients; m is an object with .solve or None."""
    b = np.asarray(b, dtype=float)
    normb = np.linalg.norm(b)
    if normb == 0.0:
        return np.zeros_like(b), PCGInfo(0, True, [0.0])
    x = np.zeros_like(b)
    r = b.copy()
    z = m.solve(r) if m is not None else r
    p = z.copy()
    rz = float(r @ z)
    residuals = [1.0]
    it = 0
    converged = False
    while it < max_iterations:
        it += 1
        ap = a @ p
        pap = float(p @ ap)
        if pap <= 0.0:
            raise IndefiniteOperatorError(
                f"nonpositive curvature p^T A p = {pap:.3e} at iteration {it}"
            )
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        relres = float(np.linalg.norm(r)) / normb
        residuals.append(relres)
        if relres <= rel_tol:
            converged = True
            break
        z = m.solve(r) if m is not None else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, PCGInfo(it, converged, residuals)


class InnerSolver:
    """Reusable A^{-1} application: dense Cholesky at small sizes, IC-PCG above."""

    def __init__(self, a: sp.csr_matrix, config: InnerSolveConfig | None = None):
        self.config = config or InnerSolveConfig()
        self.a = sp.csr_matrix(a)
        n = self.a.shape[0]
        method = self.config.method
        if method == "auto":
            method = "dense_cholesky" if n <= self.config.dense_cutoff else "pcg"
        self.method = method
        self.total_iterations = 0
        self.num_calls = 0
        if method == "dense_cholesky":
            self._chol = cho_factor(self.a.toarray())
            self._ic = None
        elif method == "pcg":
            self._chol = None
            self._ic = ichol_threshold(self.a, self.config.ichol_droptol)
        else:
            raise ValueError(f"unknown inner solve method {method!r}")

    def solve(self, r: np.ndarray) -> np.ndarray:
        self.num_calls += 1
        if self._chol is not None:
            return cho_solve(self._chol, r)
        x, info = pcg(
            self.a,
            r,
            self._ic,
            rel_tol=self.config.rel_tol,
            max_iterations=self.config.max_iterations,
        )
        self.total_iterations += info.iterations
        if not info.converged:
            raise RuntimeError(
                f"inner solve stalled at relative residual {info.residuals[-1]:.3e} "
                f"after {info.iterations} iterations"
            )
        return x


def _as_dense_checked(a) -> np.ndarray:
    if sp.issparse(a):
        if a.shape[0] > DENSE_GUARD:
            raise ValueError(
                f"matrix of size {a.shape[0]} exceeds the dense verification guard "
                f"({DENSE_GUARD})"
            )
        return a.toarray()
    a = np.asarray(a, dtype=float)
    if a.shape[0] > DENSE_GUARD:
        raise ValueError(
            f"matrix of size {a.shape[0]} exceeds the dense verification guard "
            f"({DENSE_GUARD})"
        )
    return a


def dense_eig_sym(a) -> np.ndarray:
    """Ascending eigenvalues of a symmetric matrix (verification sizes only)."""
    return eigh(_as_dense_checked(a), eigvals_only=True)


def dense_geig_sym(a, b) -> np.ndarray:
    """Ascending eigenvalues of A x = lambda B x with B SPD."""
    bd = _as_dense_checked(b)
    try:
        np.linalg.cholesky(bd)
    except np.linalg.LinAlgError as exc:
        raise ValueError("B must be symmetric positive definite") from exc
    return eigh(_as_dense_checked(a), bd, eigvals_only=True)


def write_matrix(path, a) -> None:
    """Matrix Market coordinate output."""
    from scipy.io import mmwrite

    mmwrite(path, sp.coo_matrix(a))


def read_matrix(path) -> sp.csr_matrix:
    from scipy.io import mmread

    return sp.csr_matrix(mmread(path))
