"""Generalized eigensolvers for A phi = (1/k) B phi over operator actions.

`inverse_power` is the classical outer iteration. `jfnk_eigen` treats the
fixed point of that iteration as the nonlinear system

    F(phi) = A phi - B phi / ||B phi|| = 0

and solves it by Newton's method with finite-difference Jacobian actions,
preconditioned GMRES and a backtracking line search. In both, the returned
flux satisfies ||B phi|| = k.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from app.errors import DegenerateFissionError, DegenerateFluxError, StagnationError
from app.krylov import SolveReport, as_action, gmres
from app.sparse import as_vector

logger = logging.getLogger(__name__)

ARMIJO = 1e-4
MAX_HALVINGS = 8


@dataclass
class EigenPair:
    phi: np.ndarray
    k: float
    converged: bool = True
    power_iterations: int = 0
    newton_iterations: int = 0
    linear_iterations: int = 0
    residual_evaluations: int = 0
    line_search_halvings: int = 0
    k_history: List[float] = field(default_factory=list)
    residual_history: List[float] = field(default_factory=list)
    time_function: float = 0.0
    time_krylov: float = 0.0
    time_line_search: float = 0.0


def normalize_sign(phi: np.ndarray) -> np.ndarray:
    """Flip so the first entry that is not roundoff-small is positive"""
    scale = np.max(np.abs(phi)) if phi.size else 0.0
    significant = np.flatnonzero(np.abs(phi) > 1e-12 * scale)
    if significant.size and phi[significant[0]] < 0:
        return -phi
    return phi


def _solve(apply_A_solve, rhs) -> Tuple[np.ndarray, Optional[SolveReport]]:
    out = apply_A_solve(rhs)
    if isinstance(out, tuple):
        return out[0], out[1]
    return out, None


def inverse_power(
    apply_A_solve: Callable,
    apply_B,
    phi0,
    iters: int = 100,
    tol: float = 1e-10,
) -> EigenPair:
    """A phi_{n+1} = B phi_n / k_n with k_{n+1} = ||B phi_{n+1}||.

    `apply_A_solve(rhs)` returns A^-1 rhs, or (A^-1 rhs, SolveReport).
    Stops after `iters` iterations or when |k_{n+1} - k_n| <= tol * k_{n+1}.
    """
    B = as_action(apply_B)
    phi = as_vector(phi0)
    if not np.any(phi):
        raise DegenerateFluxError("inverse power iteration needs a nonzero initial flux")
    source = B(phi)
    norm = np.linalg.norm(source)
    if norm == 0:
        raise DegenerateFissionError("initial flux produces no fission source")
    source = source / norm

    pair = EigenPair(phi=phi / norm, k=0.0, converged=False)
    k_prev = None
    for it in range(iters):
        phi_new, report = _solve(apply_A_solve, source)
        if report is not None:
            pair.linear_iterations += report.iterations
        new_source = B(phi_new)
        k = float(np.linalg.norm(new_source))
        if k == 0:
            raise DegenerateFissionError("fission source vanished during power iteration")
        pair.phi, pair.k = phi_new, k
        pair.power_iterations = it + 1
        pair.k_history.append(k)
        source = new_source / k
        logger.debug("power iteration %d: k = %.12f", it + 1, k)
        if k_prev is not None and abs(k - k_prev) <= tol * k:
            pair.converged = True
            break
        k_prev = k

    pair.phi = normalize_sign(pair.phi)
    logger.info("inverse power: k = %.10f after %d iterations", pair.k, pair.power_iterations)
    return pair


def newton_residual(phi, apply_A, apply_B) -> np.ndarray:
    A = as_action(apply_A)
    B = as_action(apply_B)
    phi = np.asarray(phi, dtype=np.float64)
    source = B(phi)
    norm = np.linalg.norm(source)
    if norm == 0:
        raise DegenerateFissionError("||B phi|| = 0 in the Newton residual")
    return A(phi) - source / norm


def jacobian_action(phi, F, residual: Callable[[np.ndarray], np.ndarray]) -> Callable:
    """Finite-difference J(phi) v with beta = sqrt(eps) sqrt(1 + ||phi||) / ||v||"""
    phi = np.asarray(phi, dtype=np.float64)
    scale = np.sqrt(np.finfo(float).eps) * np.sqrt(1.0 + np.linalg.norm(phi))

    def action(v):
        v_norm = np.linalg.norm(v)
        if v_norm == 0:
            return np.zeros_like(phi)
        beta = scale / v_norm
        return (residual(phi + beta * v) - F) / beta

    return action


def jfnk_eigen(
    apply_A,
    apply_B,
    precond=None,
    phi0=None,
    apply_A_solve: Optional[Callable] = None,
    init_power_iters: int = 2,
    newton_tol: float = 1e-3,
    linear_rtol: float = 1e-2,
    max_newton: int = 20,
    newton_atol: float = 1e-13,
    restart: int = 30,
    maxit: Optional[int] = None,
) -> EigenPair:
    """Newton-Krylov eigensolve started from `init_power_iters` inverse power steps.

    Without `apply_A_solve` the power steps solve with GMRES and `precond` at
    `linear_rtol`. Raises StagnationError (with the best iterate) when the line
    search cannot reduce ||F||.
    """
    if init_power_iters < 1:
        raise ValueError("init_power_iters must be at least 1")
    A = as_action(apply_A)
    B = as_action(apply_B)
    M = as_action(precond)

    if apply_A_solve is None:
        def apply_A_solve(rhs):
            return gmres(A, M, rhs, rtol=linear_rtol, restart=restart, maxit=maxit)

    if phi0 is None:
        raise ValueError("jfnk_eigen needs an initial flux")
    start = inverse_power(apply_A_solve, B, phi0, iters=init_power_iters, tol=0.0)
    pair = EigenPair(
        phi=start.phi,
        k=start.k,
        converged=False,
        power_iterations=start.power_iterations,
        linear_iterations=start.linear_iterations,
        k_history=list(start.k_history),
    )

    def residual(phi):
        pair.residual_evaluations += 1
        tic = time.perf_counter()
        try:
            return newton_residual(phi, A, B)
        finally:
            pair.time_function += time.perf_counter() - tic

    phi = pair.phi
    F = residual(phi)
    f_norm = float(np.linalg.norm(F))
    f0 = f_norm
    pair.residual_history.append(f_norm)

    for it in range(max_newton + 1):
        if f_norm <= newton_tol * f0 or f_norm <= newton_atol:
            pair.converged = True
            break
        if it == max_newton:
            break

        J = jacobian_action(phi, F, residual)
        tic = time.perf_counter()
        step_dir, report = gmres(J, M, -F, rtol=linear_rtol, restart=restart, maxit=maxit)
        pair.time_krylov += time.perf_counter() - tic
        pair.linear_iterations += report.iterations

        step = 1.0
        tic = time.perf_counter()
        for halving in range(MAX_HALVINGS + 1):
            trial = phi + step * step_dir
            try:
                trial_F = residual(trial)
            except DegenerateFissionError:
                trial_F = None
            if trial_F is not None:
                trial_norm = float(np.linalg.norm(trial_F))
                if trial_norm <= (1.0 - ARMIJO * step) * f_norm:
                    break
            step *= 0.5
        else:
            pair.phi = normalize_sign(phi)
            pair.k = float(np.linalg.norm(B(phi)))
            raise StagnationError(
                f"line search failed after {MAX_HALVINGS} halvings at Newton step {it + 1}",
                best=pair,
            )

        pair.time_line_search += time.perf_counter() - tic
        pair.line_search_halvings += halving
        phi, F, f_norm = trial, trial_F, trial_norm
        pair.newton_iterations = it + 1
        pair.residual_history.append(f_norm)
        pair.k_history.append(float(np.linalg.norm(B(phi))))
        logger.debug(
            "newton %d: ||F|| = %.3e, step %.4g, %d gmres iterations",
            it + 1,
            f_norm,
            step,
            report.iterations,
        )

    pair.phi = normalize_sign(phi)
    pair.k = float(np.linalg.norm(B(phi)))
    logger.info(
        "jfnk: k = %.10f, %d newton / %d linear iterations, ||F||/||F0|| = %.2e",
        pair.k,
        pair.newton_iterations,
        pair.linear_iterations,
        f_norm / f0 if f0 else 0.0,
    )
    return pair
