"""Restarted, right-preconditioned GMRES over operator actions.

Solves A M^-1 u = b and returns x = M^-1 u, so the Arnoldi residual is the
true residual ||b - A x||; convergence is declared on the recomputed true
residual.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
import scipy.linalg

from app.errors import DimensionError
from app.sparse import SparseMatrix, as_vector

logger = logging.getLogger(__name__)

Action = Callable[[np.ndarray], np.ndarray]


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: List[float] = field(default_factory=list)
    converged: bool = False
    final_true_residual: float = 0.0
    restarts: int = 0


def as_action(operator) -> Action:
    """Matrix-vector action of a SparseMatrix, dense array or callable"""
    if operator is None:
        return lambda x: np.array(x, dtype=np.float64, copy=True)
    if isinstance(operator, SparseMatrix):
        return lambda x: operator.csr @ x
    if isinstance(operator, np.ndarray):
        return lambda x: operator @ x
    if hasattr(operator, "apply"):
        return operator.apply
    return operator


def _givens(a: float, b: float) -> Tuple[float, float]:
    if b == 0.0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


def gmres(
    apply_A: Union[Action, SparseMatrix],
    apply_M_inv: Optional[Union[Action, SparseMatrix]],
    b,
    x0=None,
    rtol: float = 1e-8,
    restart: int = 30,
    maxit: Optional[int] = None,
) -> Tuple[np.ndarray, SolveReport]:
    """Returns (x, report); non-convergence is reported, never raised"""
    if rtol <= 0 or restart < 1:
        raise ValueError("gmres needs rtol > 0 and restart >= 1")
    A = as_action(apply_A)
    M = as_action(apply_M_inv)
    b = as_vector(b)
    n = b.size
    maxit = 10 * restart if maxit is None else maxit
    report = SolveReport()

    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        report.converged = True
        report.residual_history.append(0.0)
        return np.zeros(n), report

    if x0 is None:
        x = np.zeros(n)
    else:
        x = as_vector(x0, n).copy()
    target = rtol * b_norm

    while True:
        r = b - A(x)
        beta = np.linalg.norm(r)
        report.final_true_residual = float(beta)
        if beta <= target:
            report.converged = True
            break
        if report.iterations >= maxit:
            break

        V = np.zeros((restart + 1, n))
        H = np.zeros((restart + 1, restart))
        cs = np.zeros(restart)
        sn = np.zeros(restart)
        g = np.zeros(restart + 1)
        g[0] = beta
        V[0] = r / beta
        report.residual_history.append(float(beta))

        happy = False
        k = 0
        for j in range(restart):
            w = A(M(V[j]))
            if w.shape != (n,):
                raise DimensionError(f"operator returned shape {w.shape}, expected ({n},)")
            report.iterations += 1
            # modified Gram-Schmidt
            for i in range(j + 1):
                H[i, j] = np.dot(w, V[i])
                w = w - H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            happy = H[j + 1, j] <= np.finfo(float).eps * np.linalg.norm(H[: j + 1, j])
            if not happy:
                V[j + 1] = w / H[j + 1, j]

            for i in range(j):
                H[i, j], H[i + 1, j] = (
                    cs[i] * H[i, j] + sn[i] * H[i + 1, j],
                    -sn[i] * H[i, j] + cs[i] * H[i + 1, j],
                )
            cs[j], sn[j] = _givens(H[j, j], H[j + 1, j])
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            report.residual_history.append(float(abs(g[j + 1])))

            k = j + 1
            if happy or abs(g[j + 1]) <= target or report.iterations >= maxit:
                break

        y = scipy.linalg.solve_triangular(H[:k, :k], g[:k])
        x = x + M(V[:k].T @ y)
        report.restarts += 1
        logger.debug(
            "gmres cycle %d: %d iterations, estimated residual %.3e",
            report.restarts,
            report.iterations,
            abs(g[k]),
        )

        if happy:
            report.final_true_residual = float(np.linalg.norm(b - A(x)))
            report.converged = True
            break

    logger.debug(
        "gmres %s after %d iterations, residual %.3e (target %.3e)",
        "converged" if report.converged else "stopped",
        report.iterations,
        report.final_true_residual,
        target,
    )
    return x, report
