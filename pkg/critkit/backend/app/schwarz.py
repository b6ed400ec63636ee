"""One-level restricted additive Schwarz.

Every rank solves on its overlapping row set and writes back only the rows it
owns. Subdomain solves are forward SOR sweeps from a zero initial guess (or an
exact sparse LU), so the preconditioner is a fixed linear map.
"""

import logging
import threading
import time
import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from app.errors import DimensionError, SingularDiagonalError, SparseIndexError
from app.partition import Partition
from app.settings import thread_limit
from app.sparse import SparseMatrix, as_vector, extract_principal_submatrix

logger = logging.getLogger(__name__)

LocalSolver = Literal["sor", "lu"]


@dataclass(frozen=True, eq=False)
class OverlapMap:
    owned: Tuple[np.ndarray, ...]
    overlap: Tuple[np.ndarray, ...]
    delta: int

    def __post_init__(self):
        if len(self.owned) != len(self.overlap):
            raise DimensionError("owned and overlap row sets differ in rank count")
        for own, ext in zip(self.owned, self.overlap):
            if not np.all(np.isin(own, ext)):
                raise SparseIndexError("overlap rows must contain the owned rows")

    @property
    def n_ranks(self) -> int:
        return len(self.owned)

    @property
    def n_rows(self) -> int:
        return int(sum(own.size for own in self.owned))


def grow_overlap(A: SparseMatrix, owned_rows: Sequence[int], delta: int) -> np.ndarray:
    """Add `delta` layers of graph neighbours (in A or A^T) to a row set"""
    if A.n_rows != A.n_cols:
        raise DimensionError("overlap growth needs a square matrix")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    rows = np.unique(np.asarray(owned_rows, dtype=np.int64))
    if rows.size and (rows[0] < 0 or rows[-1] >= A.n_rows):
        raise SparseIndexError("owned rows out of range")
    if delta == 0:
        return rows
    pattern = A.symmetric_pattern()
    member = np.zeros(A.n_rows, dtype=bool)
    member[rows] = True
    for _ in range(delta):
        member |= (pattern @ member.astype(np.int64)) > 0
    return np.flatnonzero(member)


def build_overlap_map(A: SparseMatrix, owner: np.ndarray, n_ranks: int, delta: int) -> OverlapMap:
    owner = np.asarray(owner, dtype=np.int64)
    if owner.size != A.n_rows:
        raise DimensionError(f"owner has {owner.size} entries for {A.n_rows} rows")
    owned = tuple(np.flatnonzero(owner == rank) for rank in range(n_ranks))
    overlap = tuple(grow_overlap(A, rows, delta) for rows in owned)
    return OverlapMap(owned=owned, overlap=overlap, delta=delta)


def overlap_from_partition(A: SparseMatrix, partition: Partition, delta: int) -> OverlapMap:
    return build_overlap_map(A, partition.owner, partition.n_ranks, delta)


def _sor_factor(A_sub: SparseMatrix, omega: float) -> sp.csr_array:
    """Lower-triangular (D/omega + L) of a subdomain matrix"""
    diagonal = A_sub.diagonal()
    if np.any(diagonal == 0):
        bad = int(np.flatnonzero(diagonal == 0)[0])
        raise SingularDiagonalError(f"zero diagonal entry at local row {bad}")
    strict = sp.tril(A_sub.csr, k=-1, format="csr")
    lower = (strict + sp.diags_array(diagonal / omega)).tocsr()
    # spsolve_triangular takes C int indices only on newer scipy
    lower.indices = lower.indices.astype(np.intc)
    lower.indptr = lower.indptr.astype(np.intc)
    return lower


def _sor_sweeps(A_sub: SparseMatrix, lower: sp.csr_array, b: np.ndarray, sweeps: int) -> np.ndarray:
    x = np.zeros_like(b)
    for sweep in range(sweeps):
        residual = b if sweep == 0 else b - A_sub.csr @ x
        x = x + spla.spsolve_triangular(lower, residual, lower=True)
    return x


def sor_solve(A_sub: SparseMatrix, b, sweeps: int = 1, omega: float = 1.0) -> np.ndarray:
    """`sweeps` forward SOR sweeps from x = 0"""
    if A_sub.n_rows != A_sub.n_cols:
        raise DimensionError("SOR needs a square matrix")
    if sweeps < 1 or not 0 < omega < 2:
        raise ValueError("SOR needs sweeps >= 1 and 0 < omega < 2")
    b = as_vector(b, A_sub.n_rows)
    if b.size == 0:
        return b.copy()
    return _sor_sweeps(A_sub, _sor_factor(A_sub, omega), b, sweeps)


class RestrictedSchwarz:
    """Restricted additive Schwarz with subdomain data cached at construction.

    apply(r) = sum_i (R_i^0)^T take_owned(solve(M_i^delta, R_i^delta r))
    """

    def __init__(
        self,
        M: SparseMatrix,
        overlap: OverlapMap,
        sweeps: int = 1,
        omega: float = 1.0,
        local_solver: LocalSolver = "sor",
        threads: Optional[int] = None,
    ):
        if overlap.n_rows != M.n_rows:
            raise DimensionError(f"overlap map covers {overlap.n_rows} rows, matrix has {M.n_rows}")
        if sweeps < 1 or not 0 < omega < 2:
            raise ValueError("SOR needs sweeps >= 1 and 0 < omega < 2")
        self.M = M
        self.overlap = overlap
        self.sweeps = sweeps
        self.omega = omega
        self.local_solver = local_solver
        self.threads = thread_limit() if threads is None else max(1, threads)
        self.apply_count = 0
        self.apply_seconds = 0.0
        self._lock = threading.Lock()
        self._pool = None
        if self.threads > 1 and overlap.n_ranks > 1:
            self._pool = ThreadPoolExecutor(max_workers=self.threads)
            weakref.finalize(self, self._pool.shutdown, wait=False)
        start = time.perf_counter()

        self.submatrices: List[SparseMatrix] = []
        self._solvers = []
        self._owned_local: List[np.ndarray] = []
        for own, ext in zip(overlap.owned, overlap.overlap):
            sub = extract_principal_submatrix(M, ext)
            self.submatrices.append(sub)
            self._owned_local.append(np.searchsorted(ext, own))
            if sub.n_rows == 0:
                self._solvers.append(None)
            elif local_solver == "lu":
                self._solvers.append(spla.splu(sub.csr.tocsc()))
            else:
                self._solvers.append(_sor_factor(sub, omega))
        self.setup_seconds = time.perf_counter() - start

    @property
    def n_rows(self) -> int:
        return self.M.n_rows

    def _solve_rank(self, rank: int, r: np.ndarray) -> np.ndarray:
        ext = self.overlap.overlap[rank]
        local = r[ext]
        solver = self._solvers[rank]
        if solver is None:
            return local
        if self.local_solver == "lu":
            x = solver.solve(local)
        else:
            x = _sor_sweeps(self.submatrices[rank], solver, local, self.sweeps)
        return x[self._owned_local[rank]]

    def apply(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        if r.ndim != 1 or r.size != self.n_rows:
            raise DimensionError(f"residual has length {r.size}, expected {self.n_rows}")
        start = time.perf_counter()
        e = np.zeros_like(r)
        ranks = range(self.overlap.n_ranks)
        if self._pool is not None:
            pieces = list(self._pool.map(lambda rank: self._solve_rank(rank, r), ranks))
        else:
            pieces = [self._solve_rank(rank, r) for rank in ranks]
        # owned sets are disjoint
        for rank, piece in zip(ranks, pieces):
            e[self.overlap.owned[rank]] = piece
        elapsed = time.perf_counter() - start
        with self._lock:
            self.apply_count += 1
            self.apply_seconds += elapsed
        return e

    __call__ = apply


def ras_apply(
    M: SparseMatrix,
    overlap: OverlapMap,
    r,
    sweeps: int = 1,
    omega: float = 1.0,
    local_solver: LocalSolver = "sor",
) -> np.ndarray:
    return RestrictedSchwarz(M, overlap, sweeps, omega, local_solver).apply(r)
