import itertools

import numpy as np
import pytest
from pytest import approx

from app.eigen import (
    inverse_power,
    jacobian_action,
    jfnk_eigen,
    newton_residual,
    normalize_sign,
)
from app.errors import DegenerateFissionError, DegenerateFluxError, StagnationError
from app.sparse import SparseMatrix, laplacian_1d


def dense_solver(A):
    dense = A.toarray()
    return lambda rhs: np.linalg.solve(dense, rhs)


def two_by_two():
    A = SparseMatrix.from_dense([[2.0, -0.5], [-0.5, 1.5]])
    B = SparseMatrix.from_dense([[1.0, 0.2], [0.3, 0.8]])
    k = np.max(np.linalg.eigvals(np.linalg.solve(A.toarray(), B.toarray())).real)
    return A, B, k


def test_power_scalar():
    A = SparseMatrix.from_dense([[0.4]])
    B = SparseMatrix.from_dense([[0.5]])
    pair = inverse_power(dense_solver(A), B, [1.0], iters=5)
    assert pair.k == approx(1.25)
    assert pair.converged
    assert np.linalg.norm(B.csr @ pair.phi) == approx(pair.k)


def test_power_two_by_two():
    A, B, k = two_by_two()
    pair = inverse_power(dense_solver(A), B, [1.0, 1.0], iters=500, tol=1e-14)
    assert pair.k == approx(k, rel=1e-12)
    assert np.all(pair.phi > 0)


def test_power_history_monotone_count():
    A, B, _ = two_by_two()
    pair = inverse_power(dense_solver(A), B, [1.0, 0.0], iters=7, tol=0.0)
    assert pair.power_iterations == 7
    assert len(pair.k_history) == 7
    assert not pair.converged


def test_power_rejects_zero_flux():
    A, B, _ = two_by_two()
    with pytest.raises(DegenerateFluxError):
        inverse_power(dense_solver(A), B, [0.0, 0.0])


def test_power_rejects_nonfissile():
    A = SparseMatrix.identity(2)
    B = SparseMatrix.from_dense([[0.0, 0.0], [0.0, 0.0]])
    with pytest.raises(DegenerateFissionError):
        inverse_power(dense_solver(A), B, [1.0, 1.0])


def test_residual_zero_at_eigenpair():
    A, B, k = two_by_two()
    values, vectors = np.linalg.eig(np.linalg.solve(A.toarray(), B.toarray()))
    phi = np.abs(vectors[:, np.argmax(values.real)].real)
    phi *= k / np.linalg.norm(B.toarray() @ phi)
    assert np.allclose(newton_residual(phi, A, B), 0.0, atol=1e-12)


def test_residual_rejects_zero_source():
    with pytest.raises(DegenerateFissionError):
        newton_residual(np.ones(2), SparseMatrix.identity(2), SparseMatrix.from_dense(np.zeros((2, 2))))


def test_jacobian_action_matches_analytic():
    A, B, _ = two_by_two()
    Ad, Bd = A.toarray(), B.toarray()
    phi = np.array([0.7, 1.3])
    v = np.array([0.2, -0.5])
    F = newton_residual(phi, A, B)
    action = jacobian_action(phi, F, lambda x: newton_residual(x, A, B))
    Bphi = Bd @ phi
    norm = np.linalg.norm(Bphi)
    Bv = Bd @ v
    exact = Ad @ v - (Bv / norm - Bphi * (Bphi @ Bv) / norm**3)
    assert action(v) == approx(exact, rel=1e-5, abs=1e-7)
    assert not action(np.zeros(2)).any()


def test_jfnk_scalar():
    pair = jfnk_eigen(
        SparseMatrix.from_dense([[0.4]]),
        SparseMatrix.from_dense([[0.5]]),
        phi0=[1.0],
        newton_tol=1e-12,
    )
    assert pair.k == approx(1.25, rel=1e-12)
    assert pair.converged


def test_jfnk_laplacian_reaction():
    n = 30
    A = SparseMatrix.from_scipy(laplacian_1d(n).csr + 0.1 * np.eye(n))
    B = SparseMatrix.from_dense(np.diag(np.linspace(0.5, 1.0, n)))
    expected = np.max(np.linalg.eigvals(np.linalg.solve(A.toarray(), B.toarray())).real)
    pair = jfnk_eigen(
        A, B, phi0=np.ones(n), init_power_iters=5, newton_tol=1e-10, linear_rtol=1e-8, restart=n
    )
    assert pair.converged
    assert pair.k == approx(expected, rel=1e-8)
    assert pair.newton_iterations >= 1
    assert np.linalg.norm(B.csr @ pair.phi) == approx(pair.k)
    assert pair.residual_history[-1] <= 1e-10 * pair.residual_history[0]
    assert pair.time_krylov >= 0.0 and pair.time_function >= 0.0


def test_jfnk_stagnation_returns_best(monkeypatch):
    A, B, _ = two_by_two()
    calls = itertools.count(1)
    # every evaluation is worse than the one before
    monkeypatch.setattr(
        "app.eigen.newton_residual", lambda phi, apply_A, apply_B: np.full(2, float(next(calls)))
    )
    with pytest.raises(StagnationError) as info:
        jfnk_eigen(A, B, phi0=[1.0, 1.0], apply_A_solve=dense_solver(A), max_newton=3)
    best = info.value.best
    assert best.k > 0
    assert best.newton_iterations == 0


def test_jfnk_needs_initial_flux():
    A, B, _ = two_by_two()
    with pytest.raises(ValueError):
        jfnk_eigen(A, B)


def test_normalize_sign():
    assert normalize_sign(np.array([-1e-20, -2.0, 1.0])).tolist() == [1e-20, 2.0, -1.0]
    assert normalize_sign(np.array([0.0, 3.0])).tolist() == [0.0, 3.0]


def test_power_dominant_mode_of_diagonal():
    A = SparseMatrix.from_dense(np.diag([2.0, 1.0]))
    pair = inverse_power(dense_solver(A), SparseMatrix.identity(2), [1.0, 1.0], iters=200, tol=1e-14)
    assert pair.k == approx(1.0, rel=1e-12)
    assert abs(pair.phi[0]) < 1e-6
    assert pair.phi[1] > 0


def test_residual_identity_algebra():
    identity = SparseMatrix.identity(3)
    phi = np.array([1.0, 2.0, 2.0])
    assert newton_residual(phi, identity, identity) == approx(phi * (1.0 - 1.0 / 3.0))
    unit = phi / 3.0
    assert np.allclose(newton_residual(unit, identity, identity), 0.0)


def test_residual_is_nonlinear():
    A = SparseMatrix.from_dense(np.diag([2.0, 1.0]))
    identity = SparseMatrix.identity(2)
    phi = np.array([0.3, 0.4])
    assert not np.allclose(newton_residual(2 * phi, A, identity), 2 * newton_residual(phi, A, identity))


def test_residual_small_at_power_fixed_point():
    A, B, _ = two_by_two()
    pair = inverse_power(dense_solver(A), B, [1.0, 1.0], iters=100, tol=0.0)
    assert np.linalg.norm(newton_residual(pair.phi, A, B)) <= 1e-11


def test_jfnk_diagonal_fixed_point():
    A = SparseMatrix.from_dense(np.diag([2.0, 1.0]))
    pair = jfnk_eigen(A, SparseMatrix.identity(2), phi0=[1.0, 1.0], newton_tol=1e-12)
    assert pair.k == approx(1.0, abs=1e-8)
    assert abs(pair.phi[0]) < 1e-8
    assert pair.phi[1] == approx(1.0, abs=1e-8)


def weakly_coupled_halves(m: int = 20, coupling: float = 0.01) -> SparseMatrix:
    """Two reflective blocks joined by a weak link; the second mode is nearly degenerate"""
    T = laplacian_1d(m).toarray()
    T[0, 0] = T[-1, -1] = 1.0
    A = np.zeros((2 * m, 2 * m))
    A[:m, :m] = T
    A[m:, m:] = T
    A += 0.1 * np.eye(2 * m)
    A[m - 1, m] = A[m, m - 1] = -coupling
    A[m - 1, m - 1] += coupling
    A[m, m] += coupling
    return SparseMatrix.from_dense(A)


def test_jfnk_beats_power_on_high_dominance():
    A = weakly_coupled_halves()
    n = A.n_rows
    B = SparseMatrix.identity(n)
    values = np.sort(1.0 / np.linalg.eigvalsh(A.toarray()))[::-1]
    assert values[1] / values[0] >= 0.95
    phi0 = np.arange(1.0, n + 1.0)

    power = inverse_power(dense_solver(A), B, phi0, iters=5000, tol=1e-12)
    assert power.k == approx(values[0], rel=1e-8)
    pair = jfnk_eigen(
        A, B, phi0=phi0, apply_A_solve=dense_solver(A), newton_tol=1e-10,
        linear_rtol=1e-10, restart=n,
    )
    assert pair.k == approx(values[0], rel=1e-8)
    assert pair.power_iterations + pair.newton_iterations < power.power_iterations
