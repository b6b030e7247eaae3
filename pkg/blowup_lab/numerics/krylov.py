from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from blowup_lab.config import settings
from blowup_lab.numerics.errors import SolverError
from blowup_lab.numerics.operator import DirichletOperator

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolveStats:
    iterations: int
    residual: float


@dataclass(frozen=True)
class CoercivityEstimate:
    smallest_eigenvalue: float
    shift: float
    coercive: bool
    certified: bool = False


def _jacobi(diagonal: np.ndarray) -> LinearOperator:
    inv = 1.0 / np.where(diagonal > 0.0, diagonal, np.abs(diagonal) + 1.0)
    return LinearOperator((len(diagonal),) * 2, matvec=lambda r: inv * r, dtype=float)


def iteration_cap(op: DirichletOperator) -> int:
    # 20 * (nodes)^{1/3}
    return settings.CG_ITERATION_FACTOR * op.grid.n


def pcg_solve(
    matrix: sp.spmatrix,
    diagonal: np.ndarray,
    rhs: np.ndarray,
    maxiter: int,
    rtol: float | None = None,
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, SolveStats]:
    rtol = settings.CG_RTOL if rtol is None else rtol
    norm_b = float(np.linalg.norm(rhs))
    if norm_b == 0.0:
        return np.zeros_like(rhs), SolveStats(iterations=0, residual=0.0)

    count = 0

    def _tick(_xk: np.ndarray) -> None:
        nonlocal count
        count += 1

    x, info = cg(matrix, rhs, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter,
                 M=_jacobi(diagonal), callback=_tick)
    residual = float(np.linalg.norm(rhs - matrix @ x)) / norm_b
    if info != 0 or not np.isfinite(residual) or residual > 10.0 * rtol:
        raise SolverError(
            f"CG did not reach relative residual {rtol:.1e} within {maxiter} iterations "
            f"(residual {residual:.3e}).",
            residual=residual,
            iterations=count,
        )
    logger.debug("CG converged in %d iterations, residual %.2e", count, residual)
    return x, SolveStats(iterations=count, residual=residual)


def smallest_eigenvalue(op: DirichletOperator) -> CoercivityEstimate:
    """Inverse power iteration on A + sigma I, sigma = -min a, which is SPD.

    For a >= 0 no iteration is run; min a is returned as a certified lower bound.
    """
    if op.potential_min >= 0.0:
        # A dominates the Dirichlet Laplacian, which is positive definite
        return CoercivityEstimate(smallest_eigenvalue=op.potential_min, shift=0.0, coercive=True, certified=True)

    shift = -op.potential_min
    shifted = (op.matrix + shift * sp.identity(op.size, format="csr")).tocsr()
    diagonal = op.diagonal + shift
    maxiter = iteration_cap(op)

    x = np.ones(op.size) / np.sqrt(op.size)
    ritz = 1.0
    for _ in range(settings.COERCIVITY_ITERATIONS):
        guess = x / ritz if ritz > 0.0 else None
        y, _ = pcg_solve(shifted, diagonal, x, maxiter=maxiter,
                         rtol=settings.COERCIVITY_INNER_RTOL, x0=guess)
        x = y / np.linalg.norm(y)
        ritz = float(x @ (shifted @ x))

    value = ritz - shift
    logger.debug("smallest eigenvalue estimate %.6g (shift %.3g)", value, shift)
    return CoercivityEstimate(
        smallest_eigenvalue=value, shift=shift, coercive=value > settings.COERCIVITY_MARGIN
    )
