"""Nonlinear diffusion acceleration.

Picard loop between a high-order transport fixed-source solve, which
evaluates its isotropic source from the current low-order flux and k, and a
low-order diffusion eigenproblem closed with drift coefficients computed
from the transport solution. At the fixed point the low-order flux equals the
scalar flux of the transport solution.

Also hosts the unaccelerated transport eigensolve in angular-flux space.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Tuple, Union

import numpy as np

from app.discretization import (
    AngularQuadrature,
    CrossSections,
    SlabMesh,
    TransportOperator,
    XSLibrary,
    assemble_diffusion_operators,
    assemble_diffusion_preconditioner,
    assemble_transport_operator,
    face_angular_flux,
    face_coupling,
    face_current,
    fission_source,
    gather_cells,
    scalar_flux,
    scattering_source,
    tau,
    transport_source_operators,
)
from app.eigen import EigenPair, jfnk_eigen
from app.errors import CritkitError, DegenerateFluxError, SolverFailure
from app.krylov import SolveReport, gmres
from app.run_models import SolverConfig
from app.sgmasm import build_preconditioner
from app.sparse import SparseMatrix, as_vector

logger = logging.getLogger(__name__)

ClosureMode = Literal["drift", "saaf_functional"]


@dataclass(frozen=True, eq=False)
class ClosureCoefficients:
    """Drift coefficients per face (n_cells+1, G) and boundary functionals (2, G).

    `dtilde` (n_cells, G) is only filled in saaf_functional mode and is not
    used by the low-order operator.
    """

    dhat: np.ndarray
    gamma: np.ndarray
    mode: ClosureMode = "drift"
    dtilde: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("dhat", "gamma", "dtilde"):
            value = getattr(self, name)
            if value is not None and not np.all(np.isfinite(value)):
                raise DegenerateFluxError(f"closure coefficients {name} are not finite")

    @classmethod
    def zeros(cls, n_cells: int, groups: int, mode: ClosureMode = "drift") -> "ClosureCoefficients":
        return cls(dhat=np.zeros((n_cells + 1, groups)), gamma=np.zeros((2, groups)), mode=mode)


@dataclass
class NdaReport:
    picard_iterations: int = 0
    eps_history: List[float] = field(default_factory=list)
    its_sweep: List[int] = field(default_factory=list)
    its_newton: List[int] = field(default_factory=list)
    its_linear: List[int] = field(default_factory=list)
    pair: Optional[EigenPair] = None
    psi: Optional[np.ndarray] = None
    phi_ho: Optional[np.ndarray] = None
    closure: Optional[ClosureCoefficients] = None
    converged: bool = False
    preconditioner_applies: int = 0
    time_setup: float = 0.0
    time_apply: float = 0.0
    setup_nnz: int = 0
    time_krylov: float = 0.0
    time_function: float = 0.0
    time_line_search: float = 0.0
    time_transport: float = 0.0
    diffusion_pc: object = None
    transport_pc: object = None

    @property
    def k(self) -> Optional[float]:
        return None if self.pair is None else self.pair.k


def solve_transport_fixed_source(
    phi,
    k: float,
    mesh: SlabMesh,
    xs: Union[CrossSections, XSLibrary],
    quad: AngularQuadrature,
    precond=None,
    rtol: float = 1e-5,
    restart: int = 30,
    operator: Optional[TransportOperator] = None,
) -> Tuple[np.ndarray, SolveReport]:
    """Solve (L + R) psi = q(phi, k) with right-preconditioned GMRES"""
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    T = operator or assemble_transport_operator(mesh, xs, quad)
    rhs = scattering_source(phi, mesh, xs, quad) + fission_source(phi, mesh, xs, quad) / k
    psi, report = gmres(T.apply, precond, rhs, rtol=rtol, restart=restart)
    if not report.converged:
        raise SolverFailure(
            f"transport solve stopped after {report.iterations} iterations at residual "
            f"{report.final_true_residual:.3e}",
            report=report,
        )
    return psi, report


def _cell_gradient(face_values: np.ndarray, h: np.ndarray) -> np.ndarray:
    return (face_values[..., 1:] - face_values[..., :-1]) / h


def compute_closure(
    psi,
    phi_ho,
    mesh: SlabMesh,
    xs: Union[CrossSections, XSLibrary],
    quad: AngularQuadrature,
    mode: ClosureMode = "drift",
) -> ClosureCoefficients:
    cells = gather_cells(mesh, xs)
    G, n = cells.groups, mesh.n_cells
    phi = as_vector(phi_ho, G * n).reshape(G, n)
    current = face_current(psi, quad, mesh, G)  # (n+1, G)

    dhat = np.zeros((n + 1, G))
    for g in range(G):
        coupling = face_coupling(mesh, cells.D[:, g])
        left, right = phi[g, :-1], phi[g, 1:]
        denominator = left + right
        if np.any(denominator == 0):
            raise DegenerateFluxError(f"zero flux on both sides of an interior face in group {g}")
        dhat[1:-1, g] = -(current[1:-1, g] + coupling[1:-1] * (right - left)) / denominator
        # boundary terms act on the outward current of the edge cells
        if phi[g, 0] == 0 or phi[g, -1] == 0:
            raise DegenerateFluxError(f"zero boundary-cell flux in group {g}")
        dhat[0, g] = (-current[0, g] - coupling[0] * phi[g, 0]) / phi[g, 0]
        dhat[-1, g] = (current[-1, g] - coupling[-1] * phi[g, -1]) / phi[g, -1]

    faces = face_angular_flux(psi, quad, mesh, G)
    mu, w = quad.mu_array, quad.w_array
    gamma = np.zeros((2, G))
    for side, (face, outward) in enumerate(((0, mu < 0), (n, mu > 0))):
        total = np.einsum("n,gn->g", w, faces[:, :, face])
        partial = np.einsum("n,gn->g", (w * np.abs(mu))[outward], faces[:, outward, face])
        nonzero = total != 0
        gamma[side, nonzero] = partial[nonzero] / total[nonzero] - 0.25

    dtilde = None
    if mode == "saaf_functional":
        dtilde = _saaf_functional(psi, phi, mesh, cells, quad)
    return ClosureCoefficients(dhat=dhat, gamma=gamma, mode=mode, dtilde=dtilde)


def _saaf_functional(psi, phi: np.ndarray, mesh: SlabMesh, cells, quad: AngularQuadrature) -> np.ndarray:
    """Slab reduction of the stabilized closure coefficient, per cell and group"""
    G, n = cells.groups, mesh.n_cells
    N = quad.n_directions
    view = np.asarray(psi, dtype=float).reshape(G, N, n)
    faces = face_angular_flux(psi, quad, mesh, G)
    grad = _cell_gradient(faces, mesh.h)  # (G, N, n)
    mu, w = quad.mu_array, quad.w_array
    tau_cells = np.array(
        [[tau(cells.sigma_t[c, g], mesh.h[c]) for c in range(n)] for g in range(G)]
    )
    first_moment = np.einsum("n,gnc->gc", w * mu, view)
    anisotropic = np.einsum("cpg,pc->gc", cells.sigma_s1, first_moment)
    numerator = (
        tau_cells * np.einsum("n,gnc->gc", w * mu * mu, grad)
        + (tau_cells * cells.sigma_t.T - 1.0) * first_moment
        - tau_cells * anisotropic
        - cells.D.T * np.einsum("n,gnc->gc", w, grad)
    )
    if np.any(phi == 0):
        raise DegenerateFluxError("zero scalar flux in the closure functional")
    return (numerator / phi).T


def _diffusion_phi0(mesh: SlabMesh, G: int) -> np.ndarray:
    return np.ones(G * mesh.n_cells)


def solve_closed_diffusion_eigen(
    closure: Optional[ClosureCoefficients],
    mesh: SlabMesh,
    xs: Union[CrossSections, XSLibrary],
    solver: Optional[SolverConfig] = None,
    phi0=None,
) -> Tuple[EigenPair, object]:
    """JFNK eigensolve of the (closed) low-order system; returns (pair, preconditioner)"""
    solver = solver or SolverConfig()
    operators = assemble_diffusion_operators(mesh, xs, closure)
    pc_matrix = assemble_diffusion_preconditioner(mesh, xs, closure)
    precond = build_preconditioner(pc_matrix, solver.preconditioner, solver.multilevel_params())
    if phi0 is None:
        phi0 = _diffusion_phi0(mesh, pc_matrix.n_comp)
    pair = jfnk_eigen(
        operators.A,
        operators.B,
        precond,
        phi0=phi0,
        init_power_iters=solver.init_power_iters,
        newton_tol=solver.newton_tol,
        linear_rtol=solver.rtol_linear_diffusion,
        max_newton=solver.max_newton,
        newton_atol=solver.newton_atol,
        restart=solver.restart,
    )
    return pair, precond


def _setup_seconds(precond) -> float:
    return float(getattr(precond, "setup_seconds", 0.0))


def _setup_nnz(precond) -> int:
    counters = getattr(precond, "counters", None)
    return 0 if counters is None else counters.nnz_coarsened


def _account(report: NdaReport, precond, pair: EigenPair) -> None:
    """Fold one low-order eigensolve into the running timing totals"""
    report.diffusion_pc = precond
    report.time_setup += _setup_seconds(precond)
    report.time_apply += getattr(precond, "apply_seconds", 0.0)
    report.setup_nnz += _setup_nnz(precond)
    report.time_krylov += pair.time_krylov
    report.time_function += pair.time_function
    report.time_line_search += pair.time_line_search


def nda_solve(
    mesh: SlabMesh,
    xs: Union[CrossSections, XSLibrary],
    quad: AngularQuadrature,
    solver: Optional[SolverConfig] = None,
    phi0=None,
) -> NdaReport:
    solver = solver or SolverConfig()
    report = NdaReport()
    G = gather_cells(mesh, xs).groups
    try:
        pair, precond = solve_closed_diffusion_eigen(None, mesh, xs, solver, phi0)
        report.pair = pair
        _account(report, precond, pair)
        transport = assemble_transport_operator(mesh, xs, quad)
        # built once from L and reused for every transport solve
        transport_pc = build_preconditioner(
            transport.L, solver.preconditioner, solver.multilevel_params()
        )
        report.transport_pc = transport_pc
        report.time_setup += _setup_seconds(transport_pc)
        report.setup_nnz += _setup_nnz(transport_pc)

        phi = pair.phi
        for it in range(solver.max_nda):
            tic = time.perf_counter()
            psi, sweep = solve_transport_fixed_source(
                phi,
                pair.k,
                mesh,
                xs,
                quad,
                transport_pc,
                rtol=solver.rtol_transport,
                restart=solver.restart,
                operator=transport,
            )
            report.time_transport += time.perf_counter() - tic
            phi_ho = scalar_flux(psi, quad, G, mesh.n_cells)
            closure = compute_closure(psi, phi_ho, mesh, xs, quad, solver.closure_mode)
            pair, precond = solve_closed_diffusion_eigen(closure, mesh, xs, solver, phi0=phi)
            _account(report, precond, pair)

            eps = float(np.linalg.norm(pair.phi - phi) / np.linalg.norm(pair.phi))
            phi = pair.phi
            report.picard_iterations = it + 1
            report.eps_history.append(eps)
            report.its_sweep.append(sweep.iterations)
            report.its_newton.append(pair.newton_iterations)
            report.its_linear.append(pair.linear_iterations)
            report.pair, report.psi, report.phi_ho, report.closure = pair, psi, phi_ho, closure
            logger.debug(
                "picard %d: k = %.10f, eps = %.3e, %d transport iterations",
                it + 1,
                pair.k,
                eps,
                sweep.iterations,
            )
            if eps <= solver.nda_tol:
                report.converged = True
                break
    except CritkitError as e:
        raise SolverFailure(f"NDA failed after {report.picard_iterations} Picard iterations: {e}",
                            report=getattr(e, "report", None), partial=report) from e

    report.preconditioner_applies = getattr(transport_pc, "apply_count", 0)
    report.time_apply += getattr(transport_pc, "apply_seconds", 0.0)
    logger.info(
        "nda %s: k = %.10f after %d Picard iterations",
        "converged" if report.converged else "stopped",
        report.k,
        report.picard_iterations,
    )
    return report


@dataclass
class TransportEigenResult:
    pair: EigenPair
    phi: np.ndarray
    operator: TransportOperator
    preconditioner: object = None
    loss: Optional[SparseMatrix] = None
    production: Optional[SparseMatrix] = None


def transport_eigen_operators(
    mesh: SlabMesh, xs: Union[CrossSections, XSLibrary], quad: AngularQuadrature
) -> Tuple[SparseMatrix, SparseMatrix, TransportOperator]:
    """Angular-flux-space loss (L + R - S) and production F operators"""
    T = assemble_transport_operator(mesh, xs, quad)
    S, F = transport_source_operators(mesh, xs, quad)
    A = SparseMatrix.from_scipy(T.matrix().csr - S.csr)
    return A, F, T


def solve_transport_eigen(
    mesh: SlabMesh,
    xs: Union[CrossSections, XSLibrary],
    quad: AngularQuadrature,
    solver: Optional[SolverConfig] = None,
    psi0=None,
) -> TransportEigenResult:
    """Unaccelerated eigensolve: JFNK on the transport system, preconditioned from L"""
    solver = solver or SolverConfig()
    A, F, T = transport_eigen_operators(mesh, xs, quad)
    precond = build_preconditioner(T.L, solver.preconditioner, solver.multilevel_params())
    if psi0 is None:
        psi0 = np.ones(T.size)
    pair = jfnk_eigen(
        A,
        F,
        precond,
        phi0=psi0,
        init_power_iters=solver.init_power_iters,
        newton_tol=solver.newton_tol,
        linear_rtol=solver.rtol_transport,
        max_newton=solver.max_newton,
        newton_atol=solver.newton_atol,
        restart=solver.restart,
    )
    phi = scalar_flux(pair.phi, quad, T.groups, T.n_cells)
    return TransportEigenResult(
        pair=pair, phi=phi, operator=T, preconditioner=precond, loss=A, production=F
    )
