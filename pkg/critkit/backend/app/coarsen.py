"""Classical (Ruge-Stuben) algebraic coarsening of a single sparse matrix.

    strength -> C/F splitting (+ distance-two pass) -> direct interpolation
    -> Galerkin coarse operator, repeated level by level.

All sweeps over rows run in ascending index order and every tie goes to the
lowest index, so hierarchies are reproducible bit for bit.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp

from app.errors import DimensionError
from app.sparse import SparseMatrix, galerkin_triple_product, sparse_product

logger = logging.getLogger(__name__)

UNDECIDED, COARSE, FINE = 0, 1, 2


@dataclass(frozen=True, eq=False)
class StrengthGraph:
    """Row i lists the columns j that i strongly depends on"""

    pattern: sp.csr_array

    @property
    def n_rows(self) -> int:
        return self.pattern.shape[0]

    def strong(self, i: int) -> np.ndarray:
        return self.pattern.indices[self.pattern.indptr[i]:self.pattern.indptr[i + 1]]

    def dependents(self) -> sp.csr_array:
        """Transpose: row i lists the rows that depend strongly on i"""
        T = self.pattern.T.tocsr()
        T.sort_indices()
        return T

    @property
    def n_edges(self) -> int:
        return int(self.pattern.nnz)


@dataclass(frozen=True, eq=False)
class CFSplitting:
    is_coarse: np.ndarray

    @property
    def n_rows(self) -> int:
        return int(self.is_coarse.size)

    @property
    def coarse_points(self) -> np.ndarray:
        return np.flatnonzero(self.is_coarse)

    @property
    def fine_points(self) -> np.ndarray:
        return np.flatnonzero(~self.is_coarse)

    @property
    def n_coarse(self) -> int:
        return int(self.is_coarse.sum())


def _bool_pattern(rows, cols, n: int) -> sp.csr_array:
    S = sp.csr_array((np.ones(len(rows), dtype=bool), (rows, cols)), shape=(n, n))
    S.sum_duplicates()
    S.sort_indices()
    return S


def build_strength(A: SparseMatrix, theta: float) -> StrengthGraph:
    """j is strong for i iff -A(i,j) > theta * max_{k != i} -A(i,k)"""
    if A.n_rows != A.n_cols:
        raise DimensionError("strength of connection needs a square matrix")
    if not 0 <= theta < 1:
        raise ValueError(f"theta must lie in [0, 1), got {theta}")
    n = A.n_rows
    rows = np.repeat(np.arange(n), np.diff(A.row_offsets))
    cols = A.col_indices
    negated = -A.values
    off = rows != cols

    row_max = np.zeros(n)
    np.maximum.at(row_max, rows[off], negated[off])
    strong = off & (row_max[rows] > 0) & (negated > theta * row_max[rows])
    return StrengthGraph(_bool_pattern(rows[strong], cols[strong], n))


def _greedy_split(S: sp.csr_array, ST: sp.csr_array) -> np.ndarray:
    """First pass of the classical splitting, followed by orphan promotion.

    lambda_i starts as the number of rows strongly depending on i. Visiting
    rows in ascending order, an undecided row with positive measure becomes C
    and its dependents F; undecided rows it depends on lose one unit of
    measure while undecided strong neighbours of each new F row gain one.
    """
    n = S.shape[0]
    state = np.full(n, UNDECIDED, dtype=np.int8)
    measure = np.diff(ST.indptr).astype(np.int64)

    def strong_of(i):
        return S.indices[S.indptr[i]:S.indptr[i + 1]]

    def dependents_of(i):
        return ST.indices[ST.indptr[i]:ST.indptr[i + 1]]

    for i in range(n):
        if state[i] != UNDECIDED or measure[i] <= 0:
            continue
        state[i] = COARSE
        new_fine = [j for j in dependents_of(i) if state[j] == UNDECIDED]
        for j in new_fine:
            state[j] = FINE
        for j in strong_of(i):
            if state[j] == UNDECIDED:
                measure[j] -= 1
        for j in new_fine:
            for k in strong_of(j):
                if state[k] == UNDECIDED:
                    measure[k] += 1

    for i in np.flatnonzero(state == UNDECIDED):
        has_coarse = np.any(state[strong_of(i)] == COARSE)
        state[i] = FINE if has_coarse else COARSE

    for i in range(n):
        if state[i] == FINE and not np.any(state[strong_of(i)] == COARSE):
            state[i] = COARSE
    return state == COARSE


def cf_split(S: StrengthGraph) -> CFSplitting:
    is_coarse = _greedy_split(S.pattern, S.dependents())
    logger.debug("cf_split: %d of %d rows coarse", is_coarse.sum(), S.n_rows)
    return CFSplitting(is_coarse)


def distance_two_graph(S: StrengthGraph, split: CFSplitting) -> StrengthGraph:
    """Strong paths of length one or two between coarse points, in coarse numbering"""
    P = S.pattern.astype(np.int64)
    reach = (P + P @ P).tocsr()
    coarse = split.coarse_points
    sub = reach[coarse][:, coarse].tocoo()
    off = (sub.row != sub.col) & (sub.data != 0)
    return StrengthGraph(_bool_pattern(sub.row[off], sub.col[off], coarse.size))


def aggressive_split(S: StrengthGraph, base_split: CFSplitting) -> CFSplitting:
    """Second pass over the C set using distance-two strength.

    F rows of the result may reach their coarse points only through a removed
    C point; hierarchy setup interpolates such levels in two stages.
    """
    graph = distance_two_graph(S, base_split)
    keep = _greedy_split(graph.pattern, graph.dependents())
    is_coarse = np.zeros(base_split.n_rows, dtype=bool)
    is_coarse[base_split.coarse_points[keep]] = True
    logger.debug(
        "aggressive_split: %d -> %d coarse rows", base_split.n_coarse, int(is_coarse.sum())
    )
    return CFSplitting(is_coarse)


def build_interpolation(A: SparseMatrix, S: StrengthGraph, split: CFSplitting) -> SparseMatrix:
    """Direct interpolation; columns follow the C points in ascending row order"""
    n = A.n_rows
    if split.n_rows != n or S.n_rows != n:
        raise DimensionError("strength graph and splitting must match the matrix")
    coarse_index = np.full(n, -1, dtype=np.int64)
    coarse_index[split.coarse_points] = np.arange(split.n_coarse)
    csr = A.csr

    rows, cols, vals = [], [], []
    for i in range(n):
        if split.is_coarse[i]:
            rows.append(i)
            cols.append(coarse_index[i])
            vals.append(1.0)
            continue
        start, end = csr.indptr[i], csr.indptr[i + 1]
        neighbours = csr.indices[start:end]
        entries = csr.data[start:end]
        diagonal = entries[neighbours == i].sum()
        off = neighbours != i
        strong = S.strong(i)
        interp = strong[split.is_coarse[strong]]
        if interp.size == 0:
            raise ValueError(f"fine row {i} has no strong coarse neighbour")
        if diagonal == 0:
            raise ValueError(f"fine row {i} has a zero diagonal")

        sum_neighbours = np.minimum(entries[off], 0).sum()
        a_interp = entries[np.searchsorted(neighbours, interp)]
        sum_interp = np.minimum(a_interp, 0).sum()
        weights = -(sum_neighbours / sum_interp) * a_interp / diagonal
        rows.extend([i] * interp.size)
        cols.extend(coarse_index[interp].tolist())
        vals.extend(weights.tolist())

    return SparseMatrix.assemble(rows, cols, vals, (n, split.n_coarse))


def operator_complexity(level_matrices: Sequence[SparseMatrix]) -> float:
    if not level_matrices:
        raise ValueError("operator complexity needs at least one level")
    fine = level_matrices[0].nnz
    if fine == 0:
        return 1.0
    return sum(M.nnz for M in level_matrices) / fine


@dataclass
class CoarseLevels:
    operators: List[SparseMatrix]
    interpolations: List[SparseMatrix] = field(default_factory=list)
    coarse_points: List[np.ndarray] = field(default_factory=list)
    rows_split: int = 0
    nnz_processed: int = 0

    @property
    def sizes(self) -> List[int]:
        return [M.n_rows for M in self.operators]

    def complexity(self) -> float:
        return operator_complexity(self.operators)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "level": np.arange(len(self.operators)),
                "rows": [M.n_rows for M in self.operators],
                "nnz": [M.nnz for M in self.operators],
            }
        )


def _coarsen_once(A: SparseMatrix, theta: float, aggressive: bool, levels: CoarseLevels):
    """Interpolation and C points (in A's numbering) for one level"""
    S = build_strength(A, theta)
    split = cf_split(S)
    levels.rows_split += A.n_rows
    levels.nnz_processed += A.nnz
    P = build_interpolation(A, S, split)
    if not aggressive or split.n_coarse in (0, A.n_rows):
        return P, split.coarse_points

    target = aggressive_split(S, split)
    # second stage runs on the Galerkin operator of the first-pass C set
    A1 = galerkin_triple_product(P, A)
    S1 = build_strength(A1, theta)
    keep = target.is_coarse[split.coarse_points]
    stage = CFSplitting(_promote_orphans(S1, keep))
    levels.rows_split += A1.n_rows
    levels.nnz_processed += A1.nnz
    P2 = build_interpolation(A1, S1, stage)
    return sparse_product(P, P2), split.coarse_points[stage.is_coarse]


def _promote_orphans(S: StrengthGraph, is_coarse: np.ndarray) -> np.ndarray:
    is_coarse = is_coarse.copy()
    for i in range(S.n_rows):
        if not is_coarse[i] and not np.any(is_coarse[S.strong(i)]):
            is_coarse[i] = True
    return is_coarse


def coarsen_levels(
    A: SparseMatrix, theta: float = 0.25, agg: int = 0, max_levels: int = 10, min_coarse: int = 50
) -> CoarseLevels:
    """Coarsen until rows <= min_coarse, max_levels is reached or coarsening stalls"""
    if max_levels < 1 or min_coarse < 1:
        raise ValueError("max_levels and min_coarse must be at least 1")
    levels = CoarseLevels(operators=[A])
    current = A
    while len(levels.operators) < max_levels and current.n_rows > min_coarse:
        aggressive = len(levels.interpolations) < agg
        P, coarse_points = _coarsen_once(current, theta, aggressive, levels)
        if P.n_cols == 0 or P.n_cols >= current.n_rows:
            logger.debug("coarsening stalled at %d rows", current.n_rows)
            break
        current = galerkin_triple_product(P, current)
        levels.interpolations.append(P)
        levels.coarse_points.append(coarse_points)
        levels.operators.append(current)

    logger.info(
        "coarsened %d rows into %d levels %s, complexity %.3f",
        A.n_rows,
        len(levels.operators),
        levels.sizes,
        levels.complexity(),
    )
    return levels


def coarsen_hierarchy(
    A: SparseMatrix, theta: float = 0.25, agg: int = 0, max_levels: int = 10, min_coarse: int = 50
) -> List[SparseMatrix]:
    return coarsen_levels(A, theta, agg, max_levels, min_coarse).interpolations
