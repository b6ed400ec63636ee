"""Run orchestration and result files.

`run` executes the configured pipeline once per sweep point. With an output
directory it writes

    metrics.csv     one row per point, columns in METRICS_COLUMNS order
    timings.csv     per-phase wall times per point
    solution.csv    cell,group,phi of the last point
    solution.h5     phi, psi, k and the Picard history of the last point
    summary.json    k, convergence and every metrics row
    manifest.json   configuration echo, package versions and seed
    hierarchy.csv   level,rows,nnz of the last multilevel preconditioner
    partition.csv   row,rank of the last Schwarz preconditioner

Memory estimate in bytes:

    matrix        nnz * (8 + 4) + (n_rows + 1) * 8
    vector        8 * length
    interpolation stored once per hierarchy level, as a matrix
    coarsest LU   n^2 * 8 + n * 4
    smoother      overlapping subdomain copies when delta > 0; with delta = 0
                  the subdomain blocks are used in place and cost nothing
    hierarchy     coarse operators + interpolations + smoothers + coarsest LU;
                  the finest operator belongs to the caller
"""

import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import h5py
import numpy as np
import pandas as pd
import pydantic
import scipy
from pydantic import ValidationError

from app import __version__
from app.config import resolve_path
from app.discretization import (
    AngularQuadrature,
    SlabMesh,
    XSLibrary,
    assemble_diffusion_operators,
    assemble_diffusion_preconditioner,
    assemble_transport_operator,
    gather_cells,
    gauss_legendre,
)
from app.errors import ConfigError, CritkitError, SolverFailure, StagnationError
from app.krylov import gmres
from app.nda import NdaReport, nda_solve, solve_closed_diffusion_eigen, solve_transport_eigen
from app.partition import Partition
from app.problem_loader import read_location
from app.run_models import METRICS_COLUMNS, MetricsRow, RunConfig, SolverConfig, TimingRow
from app.schwarz import RestrictedSchwarz
from app.sgmasm import (
    ExpandedInterpolation,
    MultiComponentMatrix,
    MultilevelHierarchy,
    build_preconditioner,
)
from app.sparse import SparseMatrix, laplacian_1d
from app.xs_library import parse_library

logger = logging.getLogger(__name__)

VALUE_BYTES = 8
INDEX_BYTES = 4
OFFSET_BYTES = 8
PIVOT_BYTES = 4
SEED = 0


def matrix_bytes(A: SparseMatrix) -> int:
    return A.nnz * (VALUE_BYTES + INDEX_BYTES) + (A.n_rows + 1) * OFFSET_BYTES


def _object_bytes(obj) -> int:
    if obj is None:
        return 0
    if isinstance(obj, SparseMatrix):
        return matrix_bytes(obj)
    if isinstance(obj, MultiComponentMatrix):
        return matrix_bytes(obj.full)
    if isinstance(obj, ExpandedInterpolation):
        return obj.stored_nnz * (VALUE_BYTES + INDEX_BYTES) + (obj.sub.n_rows + 1) * OFFSET_BYTES
    if isinstance(obj, RestrictedSchwarz):
        if obj.overlap.delta == 0:
            return 0
        return sum(matrix_bytes(sub) for sub in obj.submatrices)
    if isinstance(obj, MultilevelHierarchy):
        total = sum(matrix_bytes(A) for A in obj.operators[1:])
        total += sum(_object_bytes(P) for P in obj.interpolations)
        total += sum(_object_bytes(level.smoother) for level in obj.levels)
        n = obj.levels[-1].n_rows
        return total + n * n * VALUE_BYTES + n * PIVOT_BYTES
    raise TypeError(f"no memory accounting for {type(obj).__name__}")


def _vector_bytes(vector) -> int:
    if isinstance(vector, (int, np.integer)):
        return int(vector) * VALUE_BYTES
    return int(np.size(vector)) * VALUE_BYTES


def estimate_memory(objects: Sequence = (), vectors: Sequence = ()) -> int:
    """Bytes held by matrices, preconditioners and vectors (or vector lengths)"""
    return sum(_object_bytes(obj) for obj in objects) + sum(_vector_bytes(v) for v in vectors)


@dataclass(frozen=True)
class Problem:
    mesh: SlabMesh
    library: XSLibrary
    quad: AngularQuadrature
    groups: int


def load_problem(config: RunConfig) -> Problem:
    if config.problem is None:
        raise ConfigError(f"mode {config.mode!r} needs a [problem] section", section="problem")
    location = resolve_path(config, config.problem.xs_file)
    try:
        text = read_location(location)
    except ConfigError as e:
        raise ConfigError(str(e), section="problem", key="xs_file") from e
    library = parse_library(text, location)
    mesh = config.problem.mesh()
    groups = gather_cells(mesh, library).groups
    if config.problem.groups is not None and config.problem.groups != groups:
        raise ConfigError(
            f"groups = {config.problem.groups} but {location} has {groups} groups",
            section="problem",
            key="groups",
        )
    return Problem(
        mesh=mesh, library=library, quad=gauss_legendre(config.problem.quadrature_order), groups=groups
    )


def bench_system(config: RunConfig) -> Tuple[MultiComponentMatrix, SparseMatrix]:
    """(preconditioning matrix, system matrix) of a bench run"""
    bench = config.bench
    if bench.system == "laplacian":
        M = MultiComponentMatrix.from_blocks([laplacian_1d(bench.size)] * bench.components)
        return M, M.full
    if config.problem is None:
        raise ConfigError(
            f"bench system {bench.system!r} needs a [problem] section", section="bench", key="system"
        )
    problem = load_problem(config)
    if bench.system == "diffusion":
        M = assemble_diffusion_preconditioner(problem.mesh, problem.library)
        return M, M.full
    T = assemble_transport_operator(problem.mesh, problem.library, problem.quad)
    return T.L, T.matrix()


@dataclass
class PointOutcome:
    row: MetricsRow
    timing: TimingRow
    solver: SolverConfig
    phi: Optional[np.ndarray] = None
    psi: Optional[np.ndarray] = None
    groups: int = 1
    eps_history: List[float] = field(default_factory=list)
    preconditioner: object = None


@dataclass
class RunResult:
    config: RunConfig
    rows: List[MetricsRow]
    timings: List[TimingRow]
    last: Optional[PointOutcome] = None

    @property
    def k(self) -> Optional[float]:
        return None if self.last is None else self.last.row.k

    @property
    def eps_history(self) -> List[float]:
        return [] if self.last is None else self.last.eps_history

    def metrics_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.csv_record() for row in self.rows], columns=METRICS_COLUMNS)


def _complexity(precond) -> float:
    return precond.complexity() if isinstance(precond, MultilevelHierarchy) else 1.0


def _setup_nnz(precond) -> int:
    return precond.counters.nnz_coarsened if isinstance(precond, MultilevelHierarchy) else 0


def _row(solver: SolverConfig, **values) -> MetricsRow:
    return MetricsRow(
        np=solver.np1 * solver.np2, delta=solver.delta, theta=solver.theta, agg=solver.agg, **values
    )


def _krylov_workspace(solver: SolverConfig, n: int) -> List[int]:
    return [n] * (solver.restart + 1)


def _point_solver(config: RunConfig, point: Dict[str, float]) -> SolverConfig:
    try:
        return SolverConfig(**{**config.solver.model_dump(), **point})
    except ValidationError as e:
        error = e.errors()[0]
        key = str(error["loc"][0]) if error["loc"] else None
        raise ConfigError(f"sweep value {point}: {error['msg']}", section="sweep", key=key) from e


def _run_diffusion(index: int, problem: Problem, solver: SolverConfig) -> PointOutcome:
    tic = time.perf_counter()
    pair, precond = solve_closed_diffusion_eigen(None, problem.mesh, problem.library, solver)
    operators = assemble_diffusion_operators(problem.mesh, problem.library)
    total = time.perf_counter() - tic
    mem = estimate_memory(
        [operators.A, operators.B, precond],
        [pair.phi] + _krylov_workspace(solver, operators.A.n_rows),
    )
    setup = getattr(precond, "setup_seconds", 0.0)
    apply = getattr(precond, "apply_seconds", 0.0)
    row = _row(
        solver,
        mem_bytes=mem,
        its_newton=pair.newton_iterations,
        its_linear=pair.linear_iterations,
        its_sweep=0,
        comp=_complexity(precond),
        setup_nnz=_setup_nnz(precond),
        time_setup=setup,
        time_apply=apply,
        time_total=total,
        k=pair.k,
        apply_count=getattr(precond, "apply_count", 0),
        converged=pair.converged,
    )
    timing = TimingRow(
        point=index,
        setup=setup,
        precond_apply=apply,
        krylov=pair.time_krylov,
        function_eval=pair.time_function,
        line_search=pair.time_line_search,
        total=total,
    )
    return PointOutcome(
        row=row, timing=timing, solver=solver, phi=pair.phi, groups=problem.groups, preconditioner=precond
    )


def _run_transport(index: int, problem: Problem, solver: SolverConfig) -> PointOutcome:
    tic = time.perf_counter()
    result = solve_transport_eigen(problem.mesh, problem.library, problem.quad, solver)
    total = time.perf_counter() - tic
    pair, precond = result.pair, result.preconditioner
    mem = estimate_memory(
        [result.loss, result.production, precond],
        [pair.phi, result.phi] + _krylov_workspace(solver, result.operator.size),
    )
    setup = getattr(precond, "setup_seconds", 0.0)
    apply = getattr(precond, "apply_seconds", 0.0)
    # every linear iteration of the unaccelerated solve is a transport iteration
    row = _row(
        solver,
        mem_bytes=mem,
        its_newton=pair.newton_iterations,
        its_linear=pair.linear_iterations,
        its_sweep=pair.linear_iterations,
        comp=_complexity(precond),
        setup_nnz=_setup_nnz(precond),
        time_setup=setup,
        time_apply=apply,
        time_total=total,
        k=pair.k,
        apply_count=getattr(precond, "apply_count", 0),
        converged=pair.converged,
    )
    timing = TimingRow(
        point=index,
        setup=setup,
        precond_apply=apply,
        krylov=pair.time_krylov,
        function_eval=pair.time_function,
        line_search=pair.time_line_search,
        total=total,
    )
    return PointOutcome(
        row=row,
        timing=timing,
        solver=solver,
        phi=result.phi,
        psi=pair.phi,
        groups=problem.groups,
        preconditioner=precond,
    )


def _nda_row(solver: SolverConfig, report: NdaReport, mem: int, total: float) -> MetricsRow:
    return _row(
        solver,
        mem_bytes=mem,
        its_newton=sum(report.its_newton),
        its_linear=sum(report.its_linear),
        its_sweep=sum(report.its_sweep),
        comp=_complexity(report.transport_pc),
        setup_nnz=report.setup_nnz,
        time_setup=report.time_setup,
        time_apply=report.time_apply,
        time_total=total,
        k=report.k,
        apply_count=report.preconditioner_applies,
        picard_iterations=report.picard_iterations,
        converged=report.converged,
    )


def _run_nda(index: int, problem: Problem, solver: SolverConfig) -> PointOutcome:
    tic = time.perf_counter()
    report = nda_solve(problem.mesh, problem.library, problem.quad, solver)
    total = time.perf_counter() - tic
    transport = assemble_transport_operator(problem.mesh, problem.library, problem.quad)
    operators = assemble_diffusion_operators(problem.mesh, problem.library, report.closure)
    mem = estimate_memory(
        [transport.L, transport.R, operators.A, operators.B, report.transport_pc, report.diffusion_pc],
        [report.psi, report.phi_ho, report.pair.phi] + _krylov_workspace(solver, transport.size),
    )
    timing = TimingRow(
        point=index,
        setup=report.time_setup,
        precond_apply=report.time_apply,
        krylov=report.time_krylov,
        transport=report.time_transport,
        function_eval=report.time_function,
        line_search=report.time_line_search,
        total=total,
    )
    return PointOutcome(
        row=_nda_row(solver, report, mem, total),
        timing=timing,
        solver=solver,
        phi=report.pair.phi,
        psi=report.psi,
        groups=problem.groups,
        eps_history=list(report.eps_history),
        preconditioner=report.transport_pc,
    )


def _run_bench(
    index: int, system: Tuple[MultiComponentMatrix, SparseMatrix], solver: SolverConfig, rtol: float
) -> PointOutcome:
    M, A = system
    tic = time.perf_counter()
    precond = build_preconditioner(M, solver.preconditioner, solver.multilevel_params())
    b = np.ones(M.n_rows)
    x, report = gmres(A, precond, b, rtol=rtol, restart=solver.restart)
    total = time.perf_counter() - tic
    setup = getattr(precond, "setup_seconds", 0.0)
    apply = getattr(precond, "apply_seconds", 0.0)
    row = _row(
        solver,
        mem_bytes=estimate_memory([A, precond], [x, b] + _krylov_workspace(solver, M.n_rows)),
        its_newton=0,
        its_linear=report.iterations,
        its_sweep=0,
        comp=_complexity(precond),
        setup_nnz=_setup_nnz(precond),
        time_setup=setup,
        time_apply=apply,
        time_total=total,
        apply_count=getattr(precond, "apply_count", 0),
        converged=report.converged,
    )
    timing = TimingRow(
        point=index, setup=setup, precond_apply=apply, krylov=total - setup, total=total
    )
    outcome = PointOutcome(
        row=row, timing=timing, solver=solver, phi=x, groups=M.n_comp, preconditioner=precond
    )
    if not report.converged:
        raise SolverFailure(
            f"bench GMRES stopped after {report.iterations} iterations at residual "
            f"{report.final_true_residual:.3e}",
            report=report,
            partial=outcome,
        )
    return outcome


def _failed_row(solver: SolverConfig, error: CritkitError) -> MetricsRow:
    """Best-effort metrics for a point whose solve raised"""
    counts = dict(its_newton=0, its_linear=0, its_sweep=0, picard_iterations=0, k=None)
    partial = getattr(error, "partial", None)
    if isinstance(partial, PointOutcome):
        return partial.row.model_copy(update={"converged": False})
    if isinstance(partial, NdaReport):
        counts.update(
            its_newton=sum(partial.its_newton),
            its_linear=sum(partial.its_linear),
            its_sweep=sum(partial.its_sweep),
            picard_iterations=partial.picard_iterations,
            k=partial.k,
        )
    elif isinstance(error, StagnationError) and error.best is not None:
        counts.update(
            its_newton=error.best.newton_iterations,
            its_linear=error.best.linear_iterations,
            k=error.best.k,
        )
    elif getattr(error, "report", None) is not None:
        counts.update(its_linear=error.report.iterations)
    return _row(
        solver,
        mem_bytes=0,
        comp=1.0,
        setup_nnz=0,
        time_setup=0.0,
        time_apply=0.0,
        time_total=0.0,
        converged=False,
        **counts,
    )


def run(config: RunConfig, out_dir: Optional[Union[str, Path]] = None) -> RunResult:
    """Run every sweep point; writes result files when `out_dir` is given.

    A CritkitError aborts the run after the metrics gathered so far (plus a
    row for the failed point) have been written.
    """
    result = RunResult(config=config, rows=[], timings=[])
    out = None if out_dir is None else Path(out_dir)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out / "manifest.json", config)

    points = config.sweep.points()
    solver = config.solver
    if config.mode == "bench":
        system = bench_system(config)
    else:
        problem = load_problem(config)
    try:
        for index, point in enumerate(points):
            solver = _point_solver(config, point)
            logger.info("point %d/%d: %s", index + 1, len(points), point or "base configuration")
            if config.mode == "bench":
                outcome = _run_bench(index, system, solver, config.bench.rtol)
            elif config.mode == "diffusion-eigen":
                outcome = _run_diffusion(index, problem, solver)
            elif config.mode == "transport-eigen":
                outcome = _run_transport(index, problem, solver)
            else:
                outcome = _run_nda(index, problem, solver)
            result.rows.append(outcome.row)
            result.timings.append(outcome.timing)
            result.last = outcome
    except ConfigError:
        raise
    except CritkitError as e:
        result.rows.append(_failed_row(solver, e))
        if out is not None:
            write_tables(out, result)
        logger.error("run failed after %d completed points: %s", len(result.rows) - 1, e)
        raise

    if out is not None:
        write_tables(out, result)
        write_solution(out, result)
    return result


def write_manifest(path: Path, config: RunConfig) -> None:
    manifest = {
        "critkit": __version__,
        "mode": config.mode,
        "config": config.model_dump(mode="json"),
        "sweep_points": config.sweep.points(),
        "seed": SEED,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
            "pydantic": pydantic.VERSION,
            "h5py": h5py.__version__,
        },
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))


def write_tables(out: Path, result: RunResult) -> None:
    result.metrics_frame().to_csv(out / "metrics.csv", index=False)
    pd.DataFrame([t.model_dump() for t in result.timings], columns=list(TimingRow.model_fields)).to_csv(
        out / "timings.csv", index=False
    )
    summary = {
        "mode": result.config.mode,
        "k": result.k,
        "converged": all(row.converged for row in result.rows),
        "eps_history": result.eps_history,
        "rows": [row.model_dump() for row in result.rows],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))


def solution_frame(phi: np.ndarray, groups: int) -> pd.DataFrame:
    n_cells = phi.size // groups
    return pd.DataFrame(
        {
            "cell": np.tile(np.arange(n_cells), groups),
            "group": np.repeat(np.arange(groups), n_cells),
            "phi": phi,
        }
    )


def write_solution(out: Path, result: RunResult) -> None:
    last = result.last
    if last is None or last.phi is None:
        return
    solution_frame(last.phi, last.groups).to_csv(out / "solution.csv", index=False, float_format="%.17g")

    with h5py.File(out / "solution.h5", "w") as f:
        f.create_dataset("phi", data=last.phi)
        if last.psi is not None:
            f.create_dataset("psi", data=last.psi)
        f.create_dataset("eps_history", data=np.asarray(last.eps_history, dtype=float))
        f.attrs["mode"] = result.config.mode
        f.attrs["groups"] = last.groups
        if last.row.k is not None:
            f.attrs["k"] = last.row.k

    precond = last.preconditioner
    if isinstance(precond, MultilevelHierarchy):
        precond.to_frame().to_csv(out / "hierarchy.csv", index=False)
        owner = precond.levels[0].owner
    elif isinstance(precond, RestrictedSchwarz):
        owner = np.empty(precond.n_rows, dtype=np.int64)
        for rank, rows in enumerate(precond.overlap.owned):
            owner[rows] = rank
    else:
        return
    Partition(owner=owner, np1=last.solver.np1, np2=last.solver.np2).to_frame().to_csv(
        out / "partition.csv", index=False
    )
