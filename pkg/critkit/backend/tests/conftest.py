from pathlib import Path

import numpy as np
import pytest

from app.discretization import AngularQuadrature, CrossSections, SlabMesh, gauss_legendre
from app.sparse import SparseMatrix, laplacian_1d
from app.xs_library import load_library

BACKEND = Path(__file__).resolve().parent.parent
PROBLEMS = BACKEND / "problems"


def tridiagonal_fixture(n: int = 7) -> SparseMatrix:
    """Tridiagonal matrix whose (i, j) entry is 10 i + j, 1-based"""
    rows, cols, vals = [], [], []
    for i in range(n):
        for j in range(max(0, i - 1), min(n, i + 2)):
            rows.append(i)
            cols.append(j)
            vals.append(10.0 * (i + 1) + (j + 1))
    return SparseMatrix.assemble(rows, cols, vals, (n, n))


def dense_dominant_eigenvalue(loss: SparseMatrix, production: SparseMatrix) -> float:
    values = np.linalg.eigvals(np.linalg.solve(loss.toarray(), production.toarray()))
    return float(np.max(values.real))


@pytest.fixture
def tridiagonal7():
    return tridiagonal_fixture(7)


@pytest.fixture
def laplacian():
    return laplacian_1d


@pytest.fixture
def infinite_medium_xs():
    return CrossSections(sigma_t=[1.0], sigma_s=[[0.6]], nu_sigma_f=[0.5], chi=[1.0])


@pytest.fixture
def infinite_medium(infinite_medium_xs):
    mesh = SlabMesh.uniform(1, 1.0, bc_left="reflective", bc_right="reflective")
    return mesh, infinite_medium_xs, gauss_legendre(2)


@pytest.fixture
def two_group_slab():
    library = load_library(PROBLEMS / "two_group_slab" / "xs.txt")
    mesh = SlabMesh.uniform(16, 20.0)
    return mesh, library, gauss_legendre(8)


@pytest.fixture
def half_quadrature():
    return AngularQuadrature(mu=[-0.5, 0.5], weights=[1.0, 1.0])


@pytest.fixture
def problems_dir():
    return PROBLEMS
