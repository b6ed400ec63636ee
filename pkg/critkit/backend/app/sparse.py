"""Compressed sparse row matrices and the kernels every solver layer builds on.

`SparseMatrix` owns its CSR arrays and validates them once at construction;
products and matvecs are delegated to scipy.sparse, which sums each row in
stored (ascending column) order, so results are deterministic.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from app.errors import DimensionError, MatrixFormatError, SparseIndexError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        offsets = np.asarray(self.row_offsets, dtype=np.int64)
        cols = np.asarray(self.col_indices, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "row_offsets", offsets)
        object.__setattr__(self, "col_indices", cols)
        object.__setattr__(self, "values", vals)

        if self.n_rows < 0 or self.n_cols < 0:
            raise MatrixFormatError("matrix dimensions must be non-negative")
        if offsets.shape != (self.n_rows + 1,):
            raise MatrixFormatError(
                f"row_offsets has length {offsets.size}, expected {self.n_rows + 1}"
            )
        nnz = cols.size
        if vals.size != nnz:
            raise MatrixFormatError("col_indices and values differ in length")
        if offsets[0] != 0 or offsets[-1] != nnz:
            raise MatrixFormatError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(offsets) < 0):
            raise MatrixFormatError("row_offsets must be non-decreasing")
        if nnz:
            if cols.min() < 0 or cols.max() >= self.n_cols:
                raise MatrixFormatError("column index out of range")
            increasing = np.diff(cols) > 0
            # a decrease is fine where a new row starts
            row_starts = offsets[1:-1]
            row_starts = row_starts[(row_starts > 0) & (row_starts < nnz)]
            increasing[row_starts - 1] = True
            if not np.all(increasing):
                raise MatrixFormatError(
                    "column indices must be strictly increasing within each row "
                    "(duplicates must be summed before construction)"
                )
            if not np.all(np.isfinite(vals)):
                raise MatrixFormatError("matrix values must be finite")

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.col_indices.size)

    @cached_property
    def csr(self) -> sp.csr_array:
        """scipy form of this matrix, built once"""
        return sp.csr_array(
            (self.values, self.col_indices, self.row_offsets),
            shape=self.shape,
        )

    @classmethod
    def from_scipy(cls, matrix) -> "SparseMatrix":
        csr = sp.csr_array(matrix, copy=True)
        csr.sum_duplicates()
        return cls(
            n_rows=csr.shape[0],
            n_cols=csr.shape[1],
            row_offsets=csr.indptr,
            col_indices=csr.indices,
            values=csr.data,
        )

    @classmethod
    def from_dense(cls, array) -> "SparseMatrix":
        """Nonzero entries of a dense array; exact zeros are not stored"""
        dense = np.atleast_2d(np.asarray(array, dtype=np.float64))
        return cls.from_scipy(sp.csr_array(dense))

    @classmethod
    def assemble(
        cls,
        rows: Sequence[int],
        cols: Sequence[int],
        values: Sequence[float],
        shape: Tuple[int, int],
    ) -> "SparseMatrix":
        """Assemble from triplets, summing duplicates and keeping explicit zeros"""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if rows.size and (rows.min() < 0 or rows.max() >= shape[0]):
            raise SparseIndexError("row index out of range during assembly")
        if cols.size and (cols.min() < 0 or cols.max() >= shape[1]):
            raise SparseIndexError("column index out of range during assembly")
        coo = sp.coo_array((values, (rows, cols)), shape=shape)
        return cls.from_scipy(coo.tocsr())

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls(
            n_rows=n,
            n_cols=n,
            row_offsets=np.arange(n + 1),
            col_indices=np.arange(n),
            values=np.ones(n),
        )

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def diagonal(self) -> np.ndarray:
        return self.csr.diagonal()

    def row(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        start, end = self.row_offsets[i], self.row_offsets[i + 1]
        return self.col_indices[start:end], self.values[start:end]

    def symmetric_pattern(self) -> sp.csr_array:
        """Boolean pattern of A + A^T (structure only)"""
        pattern = sp.csr_array(
            (np.ones(self.nnz, dtype=np.int8), self.col_indices, self.row_offsets),
            shape=self.shape,
        )
        return (pattern + pattern.T).tocsr()


def as_vector(x, size: int = None) -> np.ndarray:
    """Coerce to a finite 1-D float vector, checking its length when given"""
    vector = np.asarray(x, dtype=np.float64)
    if vector.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {vector.shape}")
    if size is not None and vector.size != size:
        raise DimensionError(f"expected a vector of length {size}, got {vector.size}")
    if not np.all(np.isfinite(vector)):
        raise ValueError("vector entries must be finite")
    return vector


def spmv(A: SparseMatrix, x) -> np.ndarray:
    x = as_vector(x)
    if x.size != A.n_cols:
        raise DimensionError(
            f"cannot multiply a {A.n_rows}x{A.n_cols} matrix by a vector of length {x.size}"
        )
    return A.csr @ x


def galerkin_triple_product(P: SparseMatrix, A: SparseMatrix) -> SparseMatrix:
    """P^T A P, staged as (P^T A) P.

    Entries that cancel to exactly zero in floating point are not stored.
    """
    if A.n_rows != A.n_cols or P.n_rows != A.n_rows:
        raise DimensionError(
            f"Galerkin product needs square A matching P rows, got A {A.shape} and P {P.shape}"
        )
    PtA = P.csr.T.tocsr() @ A.csr
    return SparseMatrix.from_scipy(PtA @ P.csr)


def extract_principal_submatrix(A: SparseMatrix, rows: Sequence[int]) -> SparseMatrix:
    if A.n_rows != A.n_cols:
        raise DimensionError("principal submatrices need a square matrix")
    index = np.asarray(rows, dtype=np.int64)
    if index.ndim != 1:
        raise SparseIndexError("row set must be one-dimensional")
    if index.size and (index.min() < 0 or index.max() >= A.n_rows):
        raise SparseIndexError(f"row set has indices outside [0, {A.n_rows})")
    if np.any(np.diff(index) <= 0):
        raise SparseIndexError("row set must be sorted ascending without repeats")
    if index.size == A.n_rows:
        return A
    return SparseMatrix.from_scipy(A.csr[index][:, index])


def block_diag(blocks: Sequence[SparseMatrix]) -> SparseMatrix:
    if not blocks:
        raise DimensionError("block_diag needs at least one block")
    return SparseMatrix.from_scipy(sp.block_diag([b.csr for b in blocks], format="csr"))


def sparse_product(A: SparseMatrix, B: SparseMatrix) -> SparseMatrix:
    if A.n_cols != B.n_rows:
        raise DimensionError(f"cannot multiply {A.shape} by {B.shape}")
    return SparseMatrix.from_scipy(A.csr @ B.csr)


def read_coordinate(path: Union[str, Path]) -> SparseMatrix:
    """Read 'n_rows n_cols nnz' followed by 0-based 'i j value' lines"""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise MatrixFormatError(f"{path}: empty coordinate file")
    try:
        n_rows, n_cols, nnz = (int(tok) for tok in lines[0].split())
    except ValueError as e:
        raise MatrixFormatError(f"{path}: bad header {lines[0]!r}") from e
    if len(lines) - 1 != nnz:
        raise MatrixFormatError(f"{path}: header announces {nnz} entries, found {len(lines) - 1}")
    if nnz == 0:
        return SparseMatrix.assemble([], [], [], (n_rows, n_cols))
    table = np.loadtxt(lines[1:], ndmin=2)
    return SparseMatrix.assemble(
        table[:, 0].astype(np.int64), table[:, 1].astype(np.int64), table[:, 2], (n_rows, n_cols)
    )


def write_coordinate(A: SparseMatrix, path: Union[str, Path]) -> None:
    rows = np.repeat(np.arange(A.n_rows), np.diff(A.row_offsets))
    out = [f"{A.n_rows} {A.n_cols} {A.nnz}"]
    out += [f"{i} {j} {v:.17g}" for i, j, v in zip(rows, A.col_indices, A.values)]
    Path(path).write_text("\n".join(out) + "\n")


def laplacian_1d(n: int) -> SparseMatrix:
    """tridiag(-1, 2, -1) of order n (Dirichlet ends)"""
    if n < 1:
        raise DimensionError("laplacian_1d needs n >= 1")
    idx = np.arange(n)
    rows = np.concatenate([idx, idx[1:], idx[:-1]])
    cols = np.concatenate([idx, idx[:-1], idx[1:]])
    vals = np.concatenate([np.full(n, 2.0), np.full(2 * (n - 1), -1.0)])
    return SparseMatrix.assemble(rows, cols, vals, (n, n))
