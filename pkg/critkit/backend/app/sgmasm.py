"""Multilevel restricted Schwarz preconditioners.

Two setups share one pipeline and differ only in what gets coarsened:

- SGMASM coarsens a single component of a block-diagonal (multi-component)
  matrix and replicates its interpolations across all components;
- MASM coarsens the full matrix.

Coarse operators are Galerkin products on the full matrix in both cases. The
V-cycle smooths with one restricted-Schwarz-preconditioned Richardson step
before and after the coarse correction and solves the coarsest level with a
dense LU computed at setup.
"""

import logging
import threading
import time
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd
import scipy.linalg
from pydantic import BaseModel, Field

from app.coarsen import coarsen_levels, operator_complexity
from app.errors import DimensionError, MatrixFormatError, SparseIndexError
from app.partition import hierarchical_partition
from app.schwarz import OverlapMap, RestrictedSchwarz, build_overlap_map
from app.sparse import SparseMatrix, block_diag, extract_principal_submatrix, galerkin_triple_product

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MultiComponentMatrix:
    """Block-diagonal matrix of n_comp square components of equal size"""

    full: SparseMatrix
    n_comp: int
    rows_per_comp: int

    def __post_init__(self):
        if self.n_comp < 1 or self.rows_per_comp < 0:
            raise MatrixFormatError("need at least one component")
        if self.full.n_rows != self.full.n_cols:
            raise MatrixFormatError("multi-component matrices must be square")
        if self.full.n_rows != self.n_comp * self.rows_per_comp:
            raise MatrixFormatError(
                f"{self.full.n_rows} rows do not split into {self.n_comp} components "
                f"of {self.rows_per_comp}"
            )
        if self.rows_per_comp:
            rows = np.repeat(np.arange(self.full.n_rows), np.diff(self.full.row_offsets))
            if np.any(rows // self.rows_per_comp != self.full.col_indices // self.rows_per_comp):
                raise MatrixFormatError("entries couple different components")

    @classmethod
    def from_blocks(cls, blocks: Sequence[SparseMatrix]) -> "MultiComponentMatrix":
        sizes = {b.n_rows for b in blocks}
        if len(sizes) != 1:
            raise MatrixFormatError("components must all have the same size")
        return cls(full=block_diag(blocks), n_comp=len(blocks), rows_per_comp=sizes.pop())

    @classmethod
    def single(cls, matrix: SparseMatrix) -> "MultiComponentMatrix":
        return cls(full=matrix, n_comp=1, rows_per_comp=matrix.n_rows)

    @property
    def n_rows(self) -> int:
        return self.full.n_rows

    @property
    def nnz(self) -> int:
        return self.full.nnz

    def component_of(self, row: int) -> int:
        return row // self.rows_per_comp


def extract_component(M: MultiComponentMatrix, j: int) -> SparseMatrix:
    if not 0 <= j < M.n_comp:
        raise SparseIndexError(f"component {j} out of range for {M.n_comp} components")
    if M.n_comp == 1:
        return M.full
    start = j * M.rows_per_comp
    return extract_principal_submatrix(M.full, np.arange(start, start + M.rows_per_comp))


@dataclass(frozen=True, eq=False)
class ExpandedInterpolation:
    """P_sub replicated on the diagonal n_comp times; P_sub's values are stored once"""

    sub: SparseMatrix
    n_comp: int

    @property
    def n_rows(self) -> int:
        return self.n_comp * self.sub.n_rows

    @property
    def n_cols(self) -> int:
        return self.n_comp * self.sub.n_cols

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def stored_nnz(self) -> int:
        return self.sub.nnz

    @property
    def nnz(self) -> int:
        return self.n_comp * self.sub.nnz

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or x.size != self.n_cols:
            raise DimensionError(f"expected a vector of length {self.n_cols}, got {x.size}")
        blocks = x.reshape(self.n_comp, self.sub.n_cols).T
        return (self.sub.csr @ blocks).T.ravel()

    def apply_transpose(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 1 or y.size != self.n_rows:
            raise DimensionError(f"expected a vector of length {self.n_rows}, got {y.size}")
        blocks = y.reshape(self.n_comp, self.sub.n_rows).T
        return (self.sub.csr.T @ blocks).T.ravel()

    def materialize(self) -> SparseMatrix:
        if self.n_comp == 1:
            return self.sub
        return block_diag([self.sub] * self.n_comp)

    def toarray(self) -> np.ndarray:
        return self.materialize().toarray()


def expand_interpolation(P_sub: SparseMatrix, n_comp: int) -> ExpandedInterpolation:
    if n_comp < 1:
        raise ValueError("n_comp must be at least 1")
    return ExpandedInterpolation(sub=P_sub, n_comp=n_comp)


class MultilevelParams(BaseModel):
    theta: float = Field(0.25, ge=0, lt=1)
    agg: int = Field(0, ge=0)
    max_levels: int = Field(10, ge=1)
    min_coarse: int = Field(50, ge=1)
    delta: int = Field(0, ge=0)
    sweeps: int = Field(1, ge=1)
    omega: float = Field(1.0, gt=0, lt=2)
    component_index: int = Field(0, ge=0)
    np1: int = Field(1, ge=1)
    np2: int = Field(1, ge=1)
    local_solver: Literal["sor", "lu"] = "sor"

    class Config:
        frozen = True


@dataclass(frozen=True)
class SetupCounters:
    rows_split: int
    nnz_coarsened: int


@dataclass(eq=False)
class HierarchyLevel:
    operator: MultiComponentMatrix
    owner: np.ndarray
    overlap: OverlapMap
    smoother: RestrictedSchwarz

    @property
    def n_rows(self) -> int:
        return self.operator.n_rows


@dataclass(eq=False)
class MultilevelHierarchy:
    kind: str
    params: MultilevelParams
    levels: List[HierarchyLevel]
    interpolations: List[ExpandedInterpolation]
    coarse_lu: tuple
    counters: SetupCounters
    apply_count: int = field(default=0)
    setup_seconds: float = 0.0
    apply_seconds: float = 0.0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def n_rows(self) -> int:
        return self.levels[0].n_rows

    @property
    def operators(self) -> List[SparseMatrix]:
        return [level.operator.full for level in self.levels]

    @property
    def sizes(self) -> List[int]:
        return [level.n_rows for level in self.levels]

    def complexity(self) -> float:
        return operator_complexity(self.operators)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "level": np.arange(self.n_levels),
                "rows": self.sizes,
                "nnz": [M.nnz for M in self.operators],
            }
        )

    def apply(self, r) -> np.ndarray:
        return pc_apply(self, r)

    __call__ = apply


def _level(operator: MultiComponentMatrix, owner: np.ndarray, n_ranks: int, delta: int,
           params: MultilevelParams) -> HierarchyLevel:
    overlap = build_overlap_map(operator.full, owner, n_ranks, delta)
    smoother = RestrictedSchwarz(
        operator.full, overlap, params.sweeps, params.omega, params.local_solver
    )
    return HierarchyLevel(operator=operator, owner=owner, overlap=overlap, smoother=smoother)


def _setup(M: Union[MultiComponentMatrix, SparseMatrix], params: MultilevelParams,
           subspace: bool) -> MultilevelHierarchy:
    start = time.perf_counter()
    if isinstance(M, SparseMatrix):
        M = MultiComponentMatrix.single(M)
    if params.component_index >= M.n_comp:
        raise SparseIndexError(
            f"component_index {params.component_index} out of range for {M.n_comp} components"
        )

    component = extract_component(M, params.component_index)
    spatial = hierarchical_partition(component, params.np1, params.np2)
    n_ranks = spatial.n_ranks
    fine_owner = np.tile(spatial.owner, M.n_comp)

    if subspace:
        n_rep = M.n_comp
        coarse = coarsen_levels(
            component,
            params.theta,
            params.agg,
            params.max_levels,
            max(1, params.min_coarse // n_rep),
        )
    else:
        n_rep = 1
        coarse = coarsen_levels(
            M.full, params.theta, params.agg, params.max_levels, params.min_coarse
        )

    levels = [_level(M, fine_owner, n_ranks, params.delta, params)]
    interpolations: List[ExpandedInterpolation] = []
    operator, owner = M, fine_owner
    for P_sub, c_points in zip(coarse.interpolations, coarse.coarse_points):
        P = expand_interpolation(P_sub, n_rep)
        full_c_points = (
            np.arange(n_rep)[:, None] * P_sub.n_rows + c_points[None, :]
        ).ravel()
        coarse_full = galerkin_triple_product(P.materialize(), operator.full)
        if subspace:
            operator = MultiComponentMatrix(coarse_full, M.n_comp, P_sub.n_cols)
        else:
            operator = MultiComponentMatrix.single(coarse_full)
        owner = owner[full_c_points]
        interpolations.append(P)
        # overlap only on the finest level
        levels.append(_level(operator, owner, n_ranks, 0, params))

    coarse_lu = scipy.linalg.lu_factor(levels[-1].operator.full.toarray())
    hierarchy = MultilevelHierarchy(
        kind="sgmasm" if subspace else "masm",
        params=params,
        levels=levels,
        interpolations=interpolations,
        coarse_lu=coarse_lu,
        counters=SetupCounters(rows_split=coarse.rows_split, nnz_coarsened=coarse.nnz_processed),
    )
    hierarchy.setup_seconds = time.perf_counter() - start
    logger.info(
        "%s hierarchy: %d levels %s, complexity %.3f, rows split %d",
        hierarchy.kind,
        hierarchy.n_levels,
        hierarchy.sizes,
        hierarchy.complexity(),
        hierarchy.counters.rows_split,
    )
    return hierarchy


def setup_sgmasm(M: Union[MultiComponentMatrix, SparseMatrix], params: Optional[MultilevelParams] = None) -> MultilevelHierarchy:
    return _setup(M, params or MultilevelParams(), subspace=True)


def setup_masm(M: Union[MultiComponentMatrix, SparseMatrix], params: Optional[MultilevelParams] = None) -> MultilevelHierarchy:
    return _setup(M, params or MultilevelParams(), subspace=False)


def _cycle(h: MultilevelHierarchy, level: int, r: np.ndarray) -> np.ndarray:
    if level == h.n_levels - 1:
        if r.size == 0:
            return r.copy()
        return scipy.linalg.lu_solve(h.coarse_lu, r)
    current = h.levels[level]
    A = current.operator.full.csr
    P = h.interpolations[level]

    x = current.smoother.apply(r)
    coarse_residual = P.apply_transpose(r - A @ x)
    x = x + P.apply(_cycle(h, level + 1, coarse_residual))
    x = x + current.smoother.apply(r - A @ x)
    return x


def pc_apply(h: MultilevelHierarchy, r) -> np.ndarray:
    """One V-cycle from a zero initial guess; linear in r"""
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 1 or r.size != h.n_rows:
        raise DimensionError(f"residual has length {r.size}, hierarchy has {h.n_rows} rows")
    start = time.perf_counter()
    e = _cycle(h, 0, r)
    elapsed = time.perf_counter() - start
    with h._lock:
        h.apply_count += 1
        h.apply_seconds += elapsed
    return e


def setup_ras(M: Union[MultiComponentMatrix, SparseMatrix], params: Optional[MultilevelParams] = None) -> RestrictedSchwarz:
    """One-level restricted Schwarz on the same spatial partition the hierarchies use"""
    params = params or MultilevelParams()
    if isinstance(M, SparseMatrix):
        M = MultiComponentMatrix.single(M)
    spatial = hierarchical_partition(
        extract_component(M, params.component_index), params.np1, params.np2
    )
    overlap = build_overlap_map(
        M.full, np.tile(spatial.owner, M.n_comp), spatial.n_ranks, params.delta
    )
    return RestrictedSchwarz(M.full, overlap, params.sweeps, params.omega, params.local_solver)


def build_preconditioner(
    M: Union[MultiComponentMatrix, SparseMatrix],
    kind: Literal["sgmasm", "masm", "ras", "none"],
    params: Optional[MultilevelParams] = None,
):
    """Preconditioner object with an `apply(r)` action, or None for `none`"""
    if kind == "sgmasm":
        return setup_sgmasm(M, params)
    if kind == "masm":
        return setup_masm(M, params)
    if kind == "ras":
        return setup_ras(M, params)
    if kind == "none":
        return None
    raise ValueError(f"unknown preconditioner {kind!r}")
