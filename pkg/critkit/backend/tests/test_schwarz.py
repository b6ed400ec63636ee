from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from pytest import approx

from app.errors import DimensionError, SingularDiagonalError, SparseIndexError
from app.partition import hierarchical_partition
from app.schwarz import (
    OverlapMap,
    RestrictedSchwarz,
    _sor_factor,
    build_overlap_map,
    grow_overlap,
    overlap_from_partition,
    ras_apply,
    sor_solve,
)
from app.sparse import SparseMatrix, extract_principal_submatrix, laplacian_1d


def dense_ras(A: np.ndarray, overlap: OverlapMap, r: np.ndarray) -> np.ndarray:
    """sum_i (R_i^0)^T restricted local inverse, with explicit restriction matrices"""
    n = A.shape[0]
    e = np.zeros(n)
    for own, ext in zip(overlap.owned, overlap.overlap):
        R = np.eye(n)[ext]
        local = np.linalg.solve(R @ A @ R.T, R @ r)
        keep = np.isin(ext, own)
        owned_rows = np.eye(n)[ext[keep]]
        e += owned_rows.T @ local[keep]
    return e


def test_overlap_grows_by_layers(tridiagonal7):
    owned = [4, 5, 6]
    assert grow_overlap(tridiagonal7, owned, 0).tolist() == [4, 5, 6]
    assert grow_overlap(tridiagonal7, owned, 1).tolist() == [3, 4, 5, 6]
    assert grow_overlap(tridiagonal7, owned, 2).tolist() == [2, 3, 4, 5, 6]


def test_overlap_of_left_part(tridiagonal7):
    part = hierarchical_partition(tridiagonal7, 2, 1)
    overlap = overlap_from_partition(tridiagonal7, part, 1)
    assert overlap.overlap[0].tolist() == [0, 1, 2, 3, 4]
    assert overlap.overlap[1].tolist() == [3, 4, 5, 6]
    sub = tridiagonal7.toarray()[np.ix_(overlap.overlap[1], overlap.overlap[1])]
    assert sub[0].tolist() == [44.0, 45.0, 0.0, 0.0]


@pytest.mark.parametrize(
    "delta, left, right",
    [
        (0, [0, 1, 2, 3], [4, 5, 6]),
        (1, [0, 1, 2, 3, 4], [3, 4, 5, 6]),
        (2, [0, 1, 2, 3, 4, 5], [2, 3, 4, 5, 6]),
    ],
)
def test_overlapping_submatrices_of_two_parts(tridiagonal7, delta, left, right):
    overlap = overlap_from_partition(tridiagonal7, hierarchical_partition(tridiagonal7, 2, 1), delta)
    dense = tridiagonal7.toarray()
    for rank, rows in enumerate([left, right]):
        assert overlap.overlap[rank].tolist() == rows
        sub = extract_principal_submatrix(tridiagonal7, overlap.overlap[rank])
        np.testing.assert_array_equal(sub.toarray(), dense[np.ix_(rows, rows)])


def test_overlap_uses_transpose_pattern():
    A = SparseMatrix.assemble([0, 1, 2, 0], [0, 1, 2, 2], [1.0, 1.0, 1.0, 5.0], (3, 3))
    assert grow_overlap(A, [2], 1).tolist() == [0, 2]


def test_overlap_rejects_negative_delta(tridiagonal7):
    with pytest.raises(ValueError):
        grow_overlap(tridiagonal7, [0], -1)
    with pytest.raises(SparseIndexError):
        grow_overlap(tridiagonal7, [7], 1)


def test_overlap_map_checks_containment():
    with pytest.raises(SparseIndexError):
        OverlapMap(owned=(np.array([0, 1]),), overlap=(np.array([1]),), delta=0)


def test_sor_diagonal_exact():
    A = SparseMatrix.from_dense(np.diag([2.0, 4.0]))
    assert sor_solve(A, [2.0, 4.0]) == approx([1.0, 1.0])


def test_sor_one_sweep_is_gauss_seidel():
    x = sor_solve(laplacian_1d(3), np.ones(3), sweeps=1, omega=1.0)
    assert x == approx([0.5, 0.75, 0.875])


def test_sor_converges_to_solution():
    A = laplacian_1d(6)
    b = np.arange(1.0, 7.0)
    x = sor_solve(A, b, sweeps=2000, omega=1.5)
    assert np.allclose(x, np.linalg.solve(A.toarray(), b), atol=1e-10)


def test_sor_linear_in_rhs():
    A = laplacian_1d(5)
    rng = np.random.default_rng(4)
    b1, b2 = rng.random(5), rng.random(5)
    combined = sor_solve(A, 2.0 * b1 - 3.0 * b2, sweeps=3, omega=1.2)
    separate = 2.0 * sor_solve(A, b1, 3, 1.2) - 3.0 * sor_solve(A, b2, 3, 1.2)
    assert np.allclose(combined, separate)


def test_sor_zero_diagonal():
    A = SparseMatrix.from_dense([[0.0, 1.0], [1.0, 2.0]])
    with pytest.raises(SingularDiagonalError):
        sor_solve(A, [1.0, 1.0])


def test_sor_bad_parameters():
    with pytest.raises(ValueError):
        sor_solve(laplacian_1d(2), [1.0, 1.0], omega=2.0)
    with pytest.raises(ValueError):
        sor_solve(laplacian_1d(2), [1.0, 1.0], sweeps=0)


def test_ras_single_rank_exact():
    A = laplacian_1d(6)
    overlap = build_overlap_map(A, np.zeros(6, dtype=int), 1, 0)
    r = np.arange(6.0)
    e = ras_apply(A, overlap, r, local_solver="lu")
    assert np.allclose(e, np.linalg.solve(A.toarray(), r))


def test_ras_diagonal_exact():
    A = SparseMatrix.from_dense(np.diag([1.0, 2.0, 4.0, 8.0]))
    overlap = build_overlap_map(A, np.array([0, 1, 1, 0]), 2, 1)
    r = np.array([1.0, 2.0, 4.0, 8.0])
    assert ras_apply(A, overlap, r) == approx(np.ones(4))


@pytest.mark.parametrize("delta", [0, 1, 2])
def test_ras_matches_dense_composition(delta):
    A = laplacian_1d(8)
    part = hierarchical_partition(A, 2, 1)
    overlap = overlap_from_partition(A, part, delta)
    r = np.linspace(-1.0, 2.0, 8)
    e = ras_apply(A, overlap, r, local_solver="lu")
    assert np.allclose(e, dense_ras(A.toarray(), overlap, r), atol=1e-13)


def test_ras_sor_uses_lower_triangle():
    A = laplacian_1d(8)
    part = hierarchical_partition(A, 2, 1)
    overlap = overlap_from_partition(A, part, 1)
    r = np.ones(8)
    e = ras_apply(A, overlap, r, sweeps=1, omega=1.0)
    expected = np.zeros(8)
    dense = A.toarray()
    for own, ext in zip(overlap.owned, overlap.overlap):
        local = np.linalg.solve(np.tril(dense[np.ix_(ext, ext)]), r[ext])
        expected[own] = local[np.isin(ext, own)]
    assert np.allclose(e, expected)


def test_ras_threads_agree():
    A = laplacian_1d(40)
    part = hierarchical_partition(A, 2, 2)
    overlap = overlap_from_partition(A, part, 2)
    r = np.sin(np.arange(40.0))
    serial = RestrictedSchwarz(A, overlap, sweeps=2, threads=1).apply(r)
    threaded = RestrictedSchwarz(A, overlap, sweeps=2, threads=4).apply(r)
    assert np.array_equal(serial, threaded)


def test_ras_counts_applies():
    A = laplacian_1d(4)
    pc = RestrictedSchwarz(A, build_overlap_map(A, np.zeros(4, dtype=int), 1, 0))
    pc.apply(np.ones(4))
    pc(np.ones(4))
    assert pc.apply_count == 2
    assert pc.setup_seconds >= 0.0


def test_ras_dimension_mismatch():
    A = laplacian_1d(4)
    pc = RestrictedSchwarz(A, build_overlap_map(A, np.zeros(4, dtype=int), 1, 0))
    with pytest.raises(DimensionError):
        pc.apply(np.ones(5))


def test_sor_factor_has_c_int_indices():
    lower = _sor_factor(laplacian_1d(5), 1.2)
    assert lower.indices.dtype == np.intc
    assert lower.indptr.dtype == np.intc
    assert np.allclose(lower.toarray(), np.tril(laplacian_1d(5).toarray(), -1) + np.diag([2.0 / 1.2] * 5))


def test_ras_concurrent_applies_share_counters():
    A = laplacian_1d(40)
    pc = RestrictedSchwarz(A, overlap_from_partition(A, hierarchical_partition(A, 2, 2), 1), threads=2)
    r = np.sin(np.arange(40.0))
    expected = pc.apply(r)
    with ThreadPoolExecutor(max_workers=4) as pool:
        results = list(pool.map(lambda _: pc.apply(r), range(32)))
    assert all(np.array_equal(e, expected) for e in results)
    assert pc.apply_count == 33
