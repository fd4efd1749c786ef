"""Complex sparse matrices, direct LU factorization and Krylov solvers.

Matrices are stored in compressed-row form (``scipy.sparse.csr_matrix`` with
``complex128`` values, sorted column indices, summed duplicates).  All
factorizations and iterative solves in the package go through this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, DimensionError, NotConvergedError, SingularMatrixError

#: Absolute pivot magnitude below which a factorization is declared singular.
PIVOT_TOLERANCE = 1e-14

#: Fill-reducing ordering used for all direct factorizations.  The operators
#: assembled here have a (near-)symmetric sparsity pattern, for which this
#: ordering produces far less fill than the SuperLU default.
_PERMC_SPEC = "MMD_AT_PLUS_A"


def as_complex_csr(matrix) -> sp.csr_matrix:
    """Coerce a sparse or dense matrix to canonical complex CSR form."""
    if sp.issparse(matrix):
        out = matrix.tocsr().astype(np.complex128)
    else:
        out = sp.csr_matrix(np.asarray(matrix, dtype=np.complex128))
    out.sum_duplicates()
    out.sort_indices()
    return out


def dump_matrix(matrix, path) -> None:
    """Write a matrix as text: one header line ``nrows ncols nnz``, then one
    ``row col re im`` line per stored entry, row-major."""
    a = as_complex_csr(matrix).tocoo()
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{a.shape[0]} {a.shape[1]} {a.nnz}\n")
        for r, c, v in zip(a.row, a.col, a.data):
            fh.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")


@dataclass(frozen=True)
class KrylovConfig:
    """Settings for the iterative interface solves.

    ``method`` is ``"gmres"`` or ``"bicgstab"``; ``restart`` only applies to
    GMRES.  The tolerance is relative to the right-hand side norm.
    """

    method: str = "gmres"
    tolerance: float = 1e-12
    max_iterations: int = 2000
    restart: int = 50

    def __post_init__(self):
        if self.method not in ("gmres", "bicgstab"):
            raise ConfigError(f"unknown Krylov method {self.method!r}")
        if self.tolerance <= 0:
            raise ConfigError("Krylov tolerance must be positive")
        if self.max_iterations < 1:
            raise ConfigError("Krylov max_iterations must be at least 1")
        if self.restart < 1:
            raise ConfigError("GMRES restart length must be at least 1")


class LUFactorization:
    """Direct LU factorization of a square complex sparse matrix.

    Thin wrapper around SuperLU that adds dimension checking and a strict
    near-zero-pivot test.  Solves on a shared factorization are safe to run
    concurrently; the factors are never mutated after construction.
    """

    def __init__(self, superlu, nrows: int):
        self._lu = superlu
        self.nrows = nrows

    @property
    def lower(self) -> sp.csr_matrix:
        return self._lu.L.tocsr()

    @property
    def upper(self) -> sp.csr_matrix:
        return self._lu.U.tocsr()

    @property
    def row_permutation(self) -> np.ndarray:
        return self._lu.perm_r

    @property
    def col_permutation(self) -> np.ndarray:
        return self._lu.perm_c

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=np.complex128)
        if b.shape != (self.nrows,):
            raise DimensionError(
                f"right-hand side has length {b.shape}, expected ({self.nrows},)"
            )
        return self._lu.solve(b)

    def solve_many(self, b: np.ndarray) -> np.ndarray:
        """Solve for several right-hand sides stacked as columns."""
        b = np.asarray(b, dtype=np.complex128)
        if b.ndim != 2 or b.shape[0] != self.nrows:
            raise DimensionError(
                f"right-hand sides have shape {b.shape}, expected ({self.nrows}, k)"
            )
        return self._lu.solve(b)


def lu_factorize(matrix) -> LUFactorization:
    """Factorize a square complex sparse matrix with partial pivoting.

    Raises
    ------
    SingularMatrixError
        If SuperLU reports singularity or the smallest pivot magnitude falls
        below ``PIVOT_TOLERANCE``.
    """
    a = as_complex_csr(matrix)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"matrix is {a.shape}, expected square")
    try:
        superlu = spla.splu(a.tocsc(), permc_spec=_PERMC_SPEC)
    except RuntimeError as exc:
        raise SingularMatrixError(f"factorization failed: {exc}") from exc
    pivots = np.abs(superlu.U.diagonal())
    worst = int(np.argmin(pivots))
    if pivots[worst] <= PIVOT_TOLERANCE:
        raise SingularMatrixError(
            f"near-zero pivot {pivots[worst]:.3e} at index {worst}", pivot_index=worst
        )
    return LUFactorization(superlu, a.shape[0])


def lu_solve(factorization: LUFactorization, b: np.ndarray) -> np.ndarray:
    """Solve ``A x = b`` using a previously computed factorization."""
    return factorization.solve(b)


def _as_linear_operator(apply_operator, n: int) -> spla.LinearOperator:
    if isinstance(apply_operator, spla.LinearOperator):
        return apply_operator
    if sp.issparse(apply_operator) or isinstance(apply_operator, np.ndarray):
        return spla.aslinearoperator(apply_operator)

    def matvec(v):
        # Fresh output array: a matvec that aliases its input corrupts the
        # Krylov basis updates inside scipy.
        return np.array(apply_operator(v), dtype=np.complex128, copy=True)

    return spla.LinearOperator((n, n), matvec=matvec, dtype=np.complex128)


def krylov_solve(apply_operator, b, cfg: KrylovConfig, precond=None):
    """Solve ``A x = b`` iteratively with GMRES or BiCGStab.

    Parameters
    ----------
    apply_operator : callable, ndarray, sparse matrix or LinearOperator
        The action ``v -> A v`` on vectors of ``len(b)``.
    b : array_like
        Right-hand side.
    cfg : KrylovConfig
        Method, relative tolerance, iteration budget and restart length.
    precond : optional
        Action of an approximate inverse, applied as a left preconditioner.

    Returns
    -------
    (x, iterations, residual)
        Solution, number of iterations performed, and the true relative
        residual ``||b - A x|| / ||b||``.

    Raises
    ------
    NotConvergedError
        If the iteration budget is exhausted; carries the best iterate.
    """
    b = np.asarray(b, dtype=np.complex128)
    n = b.shape[0]
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n, dtype=np.complex128), 0, 0.0

    op = _as_linear_operator(apply_operator, n)
    m_op = _as_linear_operator(precond, n) if precond is not None else None

    iterations = 0

    if cfg.method == "gmres":

        def count_inner(_pr_norm):
            nonlocal iterations
            iterations += 1

        restart = min(cfg.restart, n)
        outer = max(1, math.ceil(cfg.max_iterations / restart))
        x, info = spla.gmres(
            op,
            b,
            rtol=cfg.tolerance,
            atol=0.0,
            restart=restart,
            maxiter=outer,
            M=m_op,
            callback=count_inner,
            callback_type="pr_norm",
        )
    else:

        def count_outer(_xk):
            nonlocal iterations
            iterations += 1

        x, info = spla.bicgstab(
            op,
            b,
            rtol=cfg.tolerance,
            atol=0.0,
            maxiter=cfg.max_iterations,
            M=m_op,
            callback=count_outer,
        )

    residual = float(np.linalg.norm(b - op.matvec(x)) / bnorm)
    if info != 0 or not np.isfinite(residual) or residual > cfg.tolerance:
        raise NotConvergedError(
            f"{cfg.method} did not reach tolerance {cfg.tolerance:g} "
            f"(residual {residual:.3e} after {iterations} iterations)",
            best=x,
            residual=residual,
            iterations=iterations,
        )
    return x, iterations, residual
