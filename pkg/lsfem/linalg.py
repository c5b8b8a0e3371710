"""Sparse SPD solves for the least-squares and projection systems.

The default path is conjugate gradients with a Jacobi preconditioner. Small
systems that fail to converge fall back to a dense Cholesky solve; larger ones
raise :class:`~lsfem.exceptions.SolverError`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from lsfem.exceptions import SolverError

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-11
DENSE_LIMIT = 2000
SOLVER_METHODS = ("cg", "direct")

SparseMatrix = scipy.sparse.csr_matrix


@dataclass(frozen=True)
class SolveReport:
    """Outcome of one linear solve.

    Attributes:
        iterations: CG iterations (0 for direct solves)
        residual: Final relative residual ‖Ax − b‖ / ‖b‖
        method: "cg", "direct" or "dense" (fallback)
        converged: Whether ``residual`` met the requested tolerance
    """

    iterations: int
    residual: float
    method: str
    converged: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "method": self.method,
            "converged": self.converged,
        }


def default_maxiter(n: int) -> int:
    return int(20 * math.sqrt(n)) + 1000


def _relative_residual(A: SparseMatrix, x: np.ndarray, b: np.ndarray, bnorm: float) -> float:
    return float(np.linalg.norm(b - A @ x) / bnorm)


def _pcg(
    A: SparseMatrix, b: np.ndarray, tol: float, maxiter: int
) -> tuple[np.ndarray, SolveReport]:
    diagonal = A.diagonal()
    if np.any(diagonal <= 0.0):
        raise SolverError("matrix has a non-positive diagonal entry; it is not SPD")
    inv_diag = 1.0 / diagonal
    bnorm = float(np.linalg.norm(b))

    x = np.zeros_like(b)
    r = b.copy()
    z = inv_diag * r
    d = z.copy()
    rz = float(r @ z)
    iterations = 0
    residual = 1.0
    while iterations < maxiter:
        Ad = A @ d
        curvature = float(d @ Ad)
        if not math.isfinite(curvature) or curvature <= 0.0:
            raise SolverError(
                f"CG breakdown at iteration {iterations} (dᵀAd = {curvature})",
                SolveReport(iterations, residual, "cg", converged=False),
            )
        alpha = rz / curvature
        x += alpha * d
        r -= alpha * Ad
        iterations += 1
        residual = float(np.linalg.norm(r)) / bnorm
        if not math.isfinite(residual):
            raise SolverError(
                f"non-finite residual at iteration {iterations}",
                SolveReport(iterations, residual, "cg", converged=False),
            )
        if residual <= tol:
            # The recursive residual drifts from the true one in long runs.
            residual = _relative_residual(A, x, b, bnorm)
            if residual <= tol:
                break
            r = b - A @ x
        z = inv_diag * r
        rz_next = float(r @ z)
        d = z + (rz_next / rz) * d
        rz = rz_next
    return x, SolveReport(iterations, residual, "cg", converged=residual <= tol)


def _dense_solve(A: SparseMatrix, b: np.ndarray) -> np.ndarray:
    try:
        return scipy.linalg.solve(A.toarray(), b, assume_a="pos")
    except (np.linalg.LinAlgError, ValueError) as err:
        raise SolverError(f"dense Cholesky solve failed: {err}") from err


def solve_spd(
    A: SparseMatrix,
    b: np.ndarray,
    tol: float = DEFAULT_TOL,
    maxiter: int | None = None,
    method: str = "cg",
) -> tuple[np.ndarray, SolveReport]:
    """Solve the SPD system Ax = b.

    Args:
        A: Symmetric positive definite sparse matrix
        b: Right-hand side
        tol: Relative residual target
        maxiter: CG iteration cap (default ``20·√n + 1000``)
        method: "cg" (Jacobi-preconditioned CG) or "direct" (sparse LU)

    Returns:
        Solution vector and the solve report

    Raises:
        SolverError: On non-finite values, CG breakdown, or non-convergence of a
            system too large for the dense fallback
        ValueError: If ``method`` is unknown or shapes disagree
    """
    if method not in SOLVER_METHODS:
        raise ValueError(f"solver must be one of {', '.join(SOLVER_METHODS)}, got {method!r}")
    A = scipy.sparse.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or b.shape != (n,):
        raise ValueError(f"shape mismatch: matrix {A.shape}, rhs {b.shape}")
    if not np.all(np.isfinite(b)) or not np.all(np.isfinite(A.data)):
        raise SolverError("system contains non-finite values")
    if not np.any(b):
        return np.zeros(n), SolveReport(0, 0.0, method)

    bnorm = float(np.linalg.norm(b))
    if method == "direct":
        x = scipy.sparse.linalg.spsolve(A.tocsc(), b)
        residual = _relative_residual(A, x, b, bnorm)
        report = SolveReport(0, residual, "direct", converged=residual <= tol)
        logger.debug("direct solve n=%d residual=%.3e", n, residual)
        return x, report

    x, report = _pcg(A, b, tol, maxiter or default_maxiter(n))
    logger.debug("CG n=%d iterations=%d residual=%.3e", n, report.iterations, report.residual)
    if report.converged:
        return x, report
    if n > DENSE_LIMIT:
        raise SolverError(
            f"CG did not reach tol {tol:.1e} in {report.iterations} iterations "
            f"(residual {report.residual:.3e})",
            report,
        )
    logger.info("CG stalled at residual %.3e; falling back to dense solve (n=%d)",
                report.residual, n)
    x = _dense_solve(A, b)
    residual = _relative_residual(A, x, b, bnorm)
    return x, SolveReport(report.iterations, residual, "dense", converged=residual <= tol)


def eigen_extrema_dense(A: SparseMatrix | np.ndarray) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix via a dense solve.

    Raises:
        ValueError: If the matrix has more than 2000 rows
    """
    n = A.shape[0]
    if n > DENSE_LIMIT:
        raise ValueError(f"dense eigen solve limited to n <= {DENSE_LIMIT}, got n={n}")
    dense = A.toarray() if scipy.sparse.issparse(A) else np.asarray(A, dtype=float)
    eigenvalues = scipy.linalg.eigvalsh(dense)
    return float(eigenvalues[0]), float(eigenvalues[-1])


def symmetry_defect(A: SparseMatrix) -> float:
    """max|A − Aᵀ| / max|A|."""
    A = scipy.sparse.csr_matrix(A)
    scale = abs(A).max()
    if scale == 0:
        return 0.0
    return float(abs(A - A.T).max() / scale)


def dump_matrix(A: SparseMatrix, path: str | Path, comment: str = "") -> Path:
    """Write ``A`` in MatrixMarket coordinate format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scipy.io.mmwrite(str(path), scipy.sparse.coo_matrix(A), comment=comment, symmetry="general")
    logger.info("wrote %s (%d×%d, nnz=%d)", path, A.shape[0], A.shape[1], A.nnz)
    return path
