import numpy as np
import pytest
from pytest import approx

from app.discretization import (
    CrossSections,
    SlabMesh,
    assemble_diffusion_operators,
    assemble_transport_operator,
    face_coupling,
    face_current,
    fission_source,
    gauss_legendre,
    scalar_flux,
    scattering_source,
)
from app.errors import DegenerateFluxError, SolverFailure
from app.nda import (
    ClosureCoefficients,
    NdaReport,
    compute_closure,
    nda_solve,
    solve_closed_diffusion_eigen,
    solve_transport_eigen,
    solve_transport_fixed_source,
    transport_eigen_operators,
)
from app.run_models import SolverConfig

from conftest import dense_dominant_eigenvalue

SLAB_SOLVER = SolverConfig(
    preconditioner="sgmasm",
    delta=1,
    np1=2,
    min_coarse=4,
    rtol_transport=1e-10,
    rtol_linear_diffusion=1e-6,
    newton_tol=1e-10,
    nda_tol=1e-9,
    restart=256,
)


@pytest.fixture
def absorber():
    xs = CrossSections(sigma_t=[1.0], sigma_s=[[0.0]], nu_sigma_f=[0.5], chi=[1.0])
    return SlabMesh.uniform(1, 1.0), xs


def test_fixed_source_pure_absorber(absorber, half_quadrature):
    mesh, xs = absorber
    psi, report = solve_transport_fixed_source([1.0], 1.0, mesh, xs, half_quadrature, rtol=1e-12)
    # h/2 * nu_sigma_f * phi / k over (|mu| + sigma_t h)
    assert psi == approx([0.25 / 1.5, 0.25 / 1.5])
    assert report.converged


def test_fixed_source_zero_flux(absorber, half_quadrature):
    mesh, xs = absorber
    psi, _ = solve_transport_fixed_source([0.0], 1.0, mesh, xs, half_quadrature)
    assert not psi.any()


def test_fixed_source_matches_dense(two_group_slab):
    _, library, _ = two_group_slab
    mesh = SlabMesh.uniform(8, 10.0, bc_right="reflective")
    quad = gauss_legendre(4)
    phi = np.linspace(1.0, 2.0, 16)
    psi, _ = solve_transport_fixed_source(phi, 0.9, mesh, library, quad, rtol=1e-13, restart=64)
    T = assemble_transport_operator(mesh, library, quad)
    rhs = scattering_source(phi, mesh, library, quad) + fission_source(phi, mesh, library, quad) / 0.9
    expected = np.linalg.solve(T.matrix().toarray(), rhs)
    assert np.allclose(psi, expected, rtol=1e-9, atol=1e-12)


def test_fixed_source_failure_carries_report(two_group_slab):
    mesh, library, quad = two_group_slab
    with pytest.raises(SolverFailure) as info:
        solve_transport_fixed_source(
            np.ones(32), 1.0, mesh, library, quad, rtol=1e-30, restart=1
        )
    assert info.value.report is not None
    assert not info.value.report.converged


def test_fixed_source_rejects_nonpositive_k(absorber, half_quadrature):
    mesh, xs = absorber
    with pytest.raises(ValueError):
        solve_transport_fixed_source([1.0], 0.0, mesh, xs, half_quadrature)


def test_closure_vanishes_for_flat_symmetric_flux(infinite_medium_xs, half_quadrature):
    mesh = SlabMesh.uniform(4, 4.0, bc_left="reflective", bc_right="reflective")
    psi = np.ones(2 * 4)
    phi = scalar_flux(psi, half_quadrature, 1, 4)
    closure = compute_closure(psi, phi, mesh, infinite_medium_xs, half_quadrature)
    assert np.allclose(closure.dhat, 0.0)
    assert np.allclose(closure.gamma, 0.0)
    assert closure.dtilde is None


def test_gamma_isotropic_boundary(infinite_medium_xs, half_quadrature):
    mesh = SlabMesh.uniform(2, 2.0)
    # both directions leave the slab with the same value
    psi = np.array([3.0, 1.0, 1.0, 3.0])
    phi = scalar_flux(psi, half_quadrature, 1, 2)
    closure = compute_closure(psi, phi, mesh, infinite_medium_xs, half_quadrature)
    # outward partial 0.5 * 3 over face total 3
    assert closure.gamma[:, 0] == approx([0.25, 0.25])


def dense_transport_eigenpair(mesh, library, quad):
    A, F, _ = transport_eigen_operators(mesh, library, quad)
    values, vectors = np.linalg.eig(np.linalg.solve(A.toarray(), F.toarray()))
    top = int(np.argmax(values.real))
    psi = vectors[:, top].real
    return float(values[top].real), psi if psi.sum() > 0 else -psi


def test_closure_closes_transport_balance(two_group_slab):
    mesh, library, quad = two_group_slab
    k, psi = dense_transport_eigenpair(mesh, library, quad)
    phi = scalar_flux(psi, quad, 2, mesh.n_cells)
    closure = compute_closure(psi, phi, mesh, library, quad)
    ops = assemble_diffusion_operators(mesh, library, closure)
    lhs = ops.A.toarray() @ phi
    rhs = ops.B.toarray() @ phi / k
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-10 * np.abs(rhs).max())


def test_closed_face_flux_reproduces_transport_current(two_group_slab):
    mesh, library, quad = two_group_slab
    rng = np.random.default_rng(7)
    psi = 1.0 + rng.random(2 * quad.n_directions * mesh.n_cells)
    phi = scalar_flux(psi, quad, 2, mesh.n_cells)
    closure = compute_closure(psi, phi, mesh, library, quad)
    current = face_current(psi, quad, mesh, 2)
    cells_D = [library[0].diffusion_coefficient[g] for g in range(2)]
    for g in range(2):
        flux = phi[g * 16:(g + 1) * 16]
        coupling = face_coupling(mesh, np.full(16, cells_D[g]))
        dh = closure.dhat[:, g]
        interior = coupling[1:-1] * (flux[:-1] - flux[1:]) - dh[1:-1] * (flux[:-1] + flux[1:])
        assert np.allclose(interior, current[1:-1, g], atol=1e-12)
        assert (coupling[0] + dh[0]) * flux[0] == approx(-current[0, g])
        assert (coupling[-1] + dh[-1]) * flux[-1] == approx(current[-1, g])


def test_closure_degenerate_flux(infinite_medium_xs, half_quadrature):
    mesh = SlabMesh.uniform(2, 2.0)
    with pytest.raises(DegenerateFluxError):
        compute_closure(np.zeros(4), np.zeros(2), mesh, infinite_medium_xs, half_quadrature)


def test_saaf_functional_mode_fills_dtilde(two_group_slab):
    mesh, library, quad = two_group_slab
    psi = np.ones(2 * quad.n_directions * mesh.n_cells)
    phi = scalar_flux(psi, quad, 2, mesh.n_cells)
    closure = compute_closure(psi, phi, mesh, library, quad, mode="saaf_functional")
    assert closure.dtilde.shape == (mesh.n_cells, 2)
    assert np.all(np.isfinite(closure.dtilde))


def test_closed_operator_dense_assembly():
    xs = CrossSections(sigma_t=[1.0], sigma_s=[[0.5]], nu_sigma_f=[0.2], chi=[1.0], D=[1.0])
    mesh = SlabMesh.uniform(3, 3.0)
    dhat = np.array([[0.1], [0.02], [-0.03], [0.05]])
    closure = ClosureCoefficients(dhat=dhat, gamma=np.zeros((2, 1)))
    A = assemble_diffusion_operators(mesh, xs, closure).A.toarray()

    coupling = [1.0 / 4.5, 1.0, 1.0, 1.0 / 4.5]
    expected = np.diag(np.full(3, 0.5))
    # net rightward current through face f: coupling (phi_L - phi_R) - dhat (phi_L + phi_R)
    for f in (1, 2):
        left, right = f - 1, f
        d, dh = coupling[f], dhat[f, 0]
        expected[left, left] += d - dh
        expected[left, right] += -d - dh
        expected[right, left] -= d - dh
        expected[right, right] -= -d - dh
    expected[0, 0] += coupling[0] + dhat[0, 0]
    expected[2, 2] += coupling[3] + dhat[3, 0]
    assert np.allclose(A, expected, rtol=0, atol=1e-13)


def test_zero_closure_is_plain_diffusion(two_group_slab):
    mesh, library, _ = two_group_slab
    solver = SolverConfig(newton_tol=1e-10, rtol_linear_diffusion=1e-8, min_coarse=4)
    plain, _ = solve_closed_diffusion_eigen(None, mesh, library, solver)
    zero, _ = solve_closed_diffusion_eigen(ClosureCoefficients.zeros(16, 2), mesh, library, solver)
    assert zero.k == approx(plain.k, rel=1e-12)
    ops = assemble_diffusion_operators(mesh, library)
    assert plain.k == approx(dense_dominant_eigenvalue(ops.A, ops.B), rel=1e-8)


def test_closed_infinite_medium_keeps_k(infinite_medium):
    mesh, xs, _ = infinite_medium
    closure = ClosureCoefficients(dhat=np.zeros((2, 1)), gamma=np.full((2, 1), 0.1))
    pair, precond = solve_closed_diffusion_eigen(closure, mesh, xs, SolverConfig(newton_tol=1e-12))
    assert pair.k == approx(1.25, rel=1e-10)
    assert precond.kind == "sgmasm"


def test_nda_infinite_medium(infinite_medium):
    mesh, xs, quad = infinite_medium
    report = nda_solve(mesh, xs, quad, SolverConfig(newton_tol=1e-12))
    assert report.converged
    assert report.picard_iterations <= 2
    assert report.k == approx(1.25, rel=1e-10)
    assert len(report.eps_history) == report.picard_iterations


def test_transport_eigen_infinite_medium(infinite_medium):
    mesh, xs, quad = infinite_medium
    result = solve_transport_eigen(mesh, xs, quad, SolverConfig(newton_tol=1e-12))
    assert result.pair.k == approx(1.25, rel=1e-10)
    assert result.phi.size == 1


def test_transport_eigen_matches_dense(two_group_slab):
    mesh, library, quad = two_group_slab
    A, F, _ = transport_eigen_operators(mesh, library, quad)
    expected = dense_dominant_eigenvalue(A, F)
    result = solve_transport_eigen(mesh, library, quad, SLAB_SOLVER)
    assert result.pair.converged
    assert result.pair.k == approx(expected, abs=1e-8)
    assert np.all(result.phi > 0)


def test_nda_matches_transport(two_group_slab):
    mesh, library, quad = two_group_slab
    A, F, _ = transport_eigen_operators(mesh, library, quad)
    expected = dense_dominant_eigenvalue(A, F)
    report = nda_solve(mesh, library, quad, SLAB_SOLVER.model_copy(update={"max_nda": 30}))
    assert report.converged
    assert report.k == approx(expected, abs=1e-6)
    assert report.picard_iterations <= 15
    assert np.linalg.norm(report.pair.phi - report.phi_ho) <= 1e-7 * np.linalg.norm(report.phi_ho)
    assert report.eps_history[-1] <= 1e-9
    assert report.preconditioner_applies > 0
    assert report.transport_pc.kind == "sgmasm"


def test_nda_failure_keeps_partial_report(two_group_slab):
    mesh, library, quad = two_group_slab
    solver = SolverConfig(min_coarse=4, rtol_transport=1e-30)
    with pytest.raises(SolverFailure) as info:
        nda_solve(mesh, library, quad, solver)
    partial = info.value.partial
    assert isinstance(partial, NdaReport)
    assert partial.picard_iterations == 0
    assert partial.pair is not None
