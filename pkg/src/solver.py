"""
Sparse linear solvers for the least-squares systems
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy import sparse as sp
from scipy.sparse import linalg as spla

from assembly import SparseSystem

logger = logging.getLogger(__name__)

# relative residual above which a solution is flagged unreliable
RELIABILITY_GATE = 1e-6
# residual the solvers aim for
TARGET_RESIDUAL = 1e-10


class SolverError(RuntimeError):
    """Raised when a system matrix is numerically singular."""


@dataclass
class SolveReport:
    """
    Outcome of a linear solve.

    Attributes:
        solution: primal unknowns
        relative_residual: ||Ax - b|| / ||b|| of the full (block) system
        reliable: False when the residual exceeds the reliability gate
        method: 'splu' or 'cg'
        multiplier: Lagrange multipliers of a saddle-point solve
        statistics: factorization fill-in, iterations, timing
    """
    solution: np.ndarray
    relative_residual: float
    reliable: bool
    method: str
    multiplier: Optional[np.ndarray] = None
    statistics: Dict[str, float] = field(default_factory=dict)


def relative_residual(matrix: sp.spmatrix, x: np.ndarray, b: np.ndarray) -> float:
    """||Ax - b|| / ||b||, or the absolute residual for b = 0."""
    res = np.linalg.norm(matrix @ x - b)
    norm_b = np.linalg.norm(b)
    return float(res / norm_b) if norm_b > 0 else float(res)


def _factorize(matrix: sp.spmatrix, symmetric_mode: bool):
    options = {"SymmetricMode": True} if symmetric_mode else {}
    try:
        return spla.splu(sp.csc_matrix(matrix), permc_spec="MMD_AT_PLUS_A", options=options)
    except RuntimeError as e:
        raise SolverError(f"matrix of size {matrix.shape[0]} is numerically singular: {e}") from e


def _jacobi(matrix: sp.spmatrix) -> spla.LinearOperator:
    diagonal = matrix.diagonal()
    if np.any(diagonal <= 0):
        raise SolverError("Jacobi preconditioner needs a positive diagonal")
    inverse = 1.0 / diagonal
    return spla.LinearOperator(matrix.shape, matvec=lambda r: inverse * r)


def _report(matrix, rhs, x, method, stats, multiplier=None) -> SolveReport:
    residual = relative_residual(matrix, x if multiplier is None else np.concatenate((x, multiplier)), rhs)
    reliable = bool(np.isfinite(residual) and residual <= RELIABILITY_GATE)
    if not reliable:
        logger.warning("unreliable %s solve: relative residual %.3e exceeds %.0e",
                       method, residual, RELIABILITY_GATE)
    elif residual > TARGET_RESIDUAL:
        logger.info("%s solve reached relative residual %.3e only", method, residual)
    return SolveReport(solution=x, relative_residual=residual, reliable=reliable, method=method,
                       multiplier=multiplier, statistics=stats)


def solve_spd(system: SparseSystem, iterative: bool = False, maxiter: Optional[int] = None) -> SolveReport:
    """
    Solve a symmetric positive definite system.

    Args:
        system: SparseSystem tagged 'spd'
        iterative: use Jacobi-preconditioned conjugate gradients instead of
            the sparse direct factorization
        maxiter: iteration cap for conjugate gradients

    Returns:
        SolveReport with the solution and its relative residual

    Raises:
        SolverError: for a saddle-tagged system or a singular matrix
    """
    if system.structure != "spd":
        raise SolverError(f"solve_spd needs an 'spd' system, got {system.structure!r}")
    matrix, rhs = system.matrix, system.rhs
    start = time.perf_counter()

    if iterative:
        iterations = [0]

        def count(_):
            iterations[0] += 1

        x, info = spla.cg(matrix, rhs, rtol=TARGET_RESIDUAL, atol=0.0, M=_jacobi(matrix),
                          maxiter=maxiter or 10 * matrix.shape[0], callback=count)
        if info < 0:
            raise SolverError(f"conjugate gradients broke down (info={info})")
        stats = {"iterations": iterations[0], "converged": float(info == 0),
                 "seconds": time.perf_counter() - start}
        method = "cg"
    else:
        lu = _factorize(matrix, symmetric_mode=True)
        x = lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SolverError("direct solve produced non-finite values, matrix is numerically singular")
        stats = {"fill": float(lu.L.nnz + lu.U.nnz), "seconds": time.perf_counter() - start}
        method = "splu"

    report = _report(matrix, rhs, x, method, stats)
    logger.debug("spd %s solve: n=%d residual=%.2e", method, matrix.shape[0], report.relative_residual)
    return report


def solve_saddle(system: SparseSystem) -> SolveReport:
    """
    Solve the block system [[A, C^T], [C, 0]] [x; lambda] = [b; 0].

    Returns:
        SolveReport with primal solution x and multiplier lambda; the residual
        is measured on the full block system

    Raises:
        SolverError: for an spd-tagged system or a rank-deficient constraint block
    """
    if system.structure != "saddle":
        raise SolverError(f"solve_saddle needs a 'saddle' system, got {system.structure!r}")
    n = system.n_primal
    if system.n_multiplier == 0:
        primal = SparseSystem(matrix=system.matrix[:n, :n].tocsr(), rhs=system.rhs[:n], structure="spd",
                              n_primal=n, load_norm_sq=system.load_norm_sq)
        return solve_spd(primal)

    start = time.perf_counter()
    try:
        lu = _factorize(system.matrix, symmetric_mode=False)
    except SolverError as e:
        raise SolverError(f"saddle-point matrix is singular, constraint block may be rank deficient: {e}") from e
    full = lu.solve(system.rhs)
    if not np.all(np.isfinite(full)):
        raise SolverError("saddle-point solve produced non-finite values, constraint block is rank deficient")
    stats = {"fill": float(lu.L.nnz + lu.U.nnz), "seconds": time.perf_counter() - start}
    report = _report(system.matrix, system.rhs, full[:n], "splu", stats, multiplier=full[n:])
    logger.debug("saddle solve: n=%d m=%d residual=%.2e", n, system.n_multiplier, report.relative_residual)
    return report
