"""1D slab discretization: cell-centered finite-volume multigroup diffusion and
first-order upwind discrete ordinates transport.

Unknowns are ordered component-major everywhere: diffusion row g*n_cells + c,
transport row (g*N_d + n)*n_cells + c.
"""

import logging
from dataclasses import dataclass
from typing import List, Literal, Mapping, Optional, Union

import numpy as np
from pydantic import BaseModel, model_validator

from app.errors import CrossSectionError, DimensionError, QuadratureError
from app.sgmasm import MultiComponentMatrix
from app.sparse import SparseMatrix, as_vector, block_diag, spmv

logger = logging.getLogger(__name__)

BoundaryCondition = Literal["vacuum", "reflective"]


class CrossSections(BaseModel):
    sigma_t: List[float]
    sigma_s: List[List[float]]  # sigma_s[g_from][g_to]
    nu_sigma_f: List[float]
    chi: List[float]
    sigma_s1: Optional[List[List[float]]] = None
    D: Optional[List[float]] = None

    class Config:
        frozen = True
        json_schema_extra = {
            "example": {
                "sigma_t": [1.0],
                "sigma_s": [[0.6]],
                "nu_sigma_f": [0.5],
                "chi": [1.0],
            }
        }

    @model_validator(mode="after")
    def check_physics(self):
        G = len(self.sigma_t)
        if G == 0:
            raise ValueError("at least one energy group is required")
        for name in ("nu_sigma_f", "chi"):
            if len(getattr(self, name)) != G:
                raise ValueError(f"{name} must have {G} entries")
        if self.D is not None and len(self.D) != G:
            raise ValueError(f"D must have {G} entries")
        for name in ("sigma_s", "sigma_s1"):
            matrix = getattr(self, name)
            if matrix is not None and (
                len(matrix) != G or any(len(row) != G for row in matrix)
            ):
                raise ValueError(f"{name} must be {G}x{G}")

        arrays = {
            "sigma_t": self.sigma_t,
            "sigma_s": self.sigma_s,
            "nu_sigma_f": self.nu_sigma_f,
            "chi": self.chi,
        }
        if self.sigma_s1 is not None:
            arrays["sigma_s1"] = self.sigma_s1
        if self.D is not None:
            arrays["D"] = self.D
        for name, values in arrays.items():
            values = np.asarray(values, dtype=float)
            if not np.all(np.isfinite(values)) or np.any(values < 0):
                raise ValueError(f"{name} entries must be finite and non-negative")

        sigma_t = np.asarray(self.sigma_t)
        sigma_s = np.asarray(self.sigma_s)
        if np.any(np.asarray(self.nu_sigma_f) > 0) and abs(sum(self.chi) - 1.0) > 1e-12:
            raise ValueError(f"chi must sum to 1 for a fissile material, got {sum(self.chi)}")
        if np.any(sigma_s.sum(axis=1) > sigma_t * (1 + 1e-14)):
            raise ValueError("total scattering out of a group exceeds sigma_t")
        if self.D is None and np.any(sigma_t <= 0):
            raise ValueError("D defaults to 1/(3 sigma_t) and needs sigma_t > 0")
        return self

    @property
    def groups(self) -> int:
        return len(self.sigma_t)

    @property
    def diffusion_coefficient(self) -> np.ndarray:
        if self.D is not None:
            return np.asarray(self.D, dtype=float)
        return 1.0 / (3.0 * np.asarray(self.sigma_t, dtype=float))

    @property
    def sigma_r(self) -> np.ndarray:
        return np.asarray(self.sigma_t, dtype=float) - np.diag(np.asarray(self.sigma_s, dtype=float))


class SlabMesh(BaseModel):
    widths: List[float]
    material: List[int]
    bc_left: BoundaryCondition = "vacuum"
    bc_right: BoundaryCondition = "vacuum"

    class Config:
        frozen = True

    @model_validator(mode="after")
    def check_cells(self):
        if not self.widths:
            raise ValueError("a mesh needs at least one cell")
        if len(self.material) != len(self.widths):
            raise ValueError("material must list one id per cell")
        if any(not np.isfinite(w) or w <= 0 for w in self.widths):
            raise ValueError("cell widths must be positive")
        return self

    @classmethod
    def uniform(
        cls,
        n_cells: int,
        length: float,
        material: Union[int, List[int]] = 0,
        bc_left: BoundaryCondition = "vacuum",
        bc_right: BoundaryCondition = "vacuum",
    ) -> "SlabMesh":
        materials = [material] * n_cells if isinstance(material, int) else list(material)
        return cls(
            widths=[length / n_cells] * n_cells,
            material=materials,
            bc_left=bc_left,
            bc_right=bc_right,
        )

    @property
    def n_cells(self) -> int:
        return len(self.widths)

    @property
    def h(self) -> np.ndarray:
        return np.asarray(self.widths, dtype=float)


class AngularQuadrature(BaseModel):
    mu: List[float]
    weights: List[float]

    class Config:
        frozen = True

    @model_validator(mode="after")
    def check_directions(self):
        mu = np.asarray(self.mu, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if mu.size == 0 or mu.size != w.size:
            raise ValueError("mu and weights must be nonempty and of equal length")
        if np.any(np.abs(mu) >= 1.0) or np.any(mu == 0.0):
            raise ValueError("directions must lie in (-1, 1) without 0")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        if abs(w.sum() - 2.0) > 1e-12:
            raise ValueError(f"weights must sum to 2, got {w.sum()!r}")
        order = np.argsort(mu)
        if not (np.allclose(mu[order], -mu[order][::-1], rtol=0, atol=1e-14)
                and np.allclose(w[order], w[order][::-1], rtol=0, atol=1e-14)):
            raise ValueError("direction set must be symmetric with equal mirrored weights")
        return self

    @property
    def n_directions(self) -> int:
        return len(self.mu)

    @property
    def mu_array(self) -> np.ndarray:
        return np.asarray(self.mu, dtype=float)

    @property
    def w_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    def mirror(self, n: int) -> int:
        """Index of the direction -mu[n]"""
        matches = np.flatnonzero(np.isclose(self.mu_array, -self.mu[n], rtol=0, atol=1e-14))
        if matches.size != 1:
            raise QuadratureError(f"direction {n} has no unique mirror")
        return int(matches[0])


def gauss_legendre(order: int) -> AngularQuadrature:
    if order < 2 or order % 2:
        raise QuadratureError(f"slab quadrature order must be even and >= 2, got {order}")
    mu, w = np.polynomial.legendre.leggauss(order)
    w = w * (2.0 / w.sum())
    # leggauss is symmetric only to roundoff; mirror exactly
    half = order // 2
    mu[half:] = -mu[:half][::-1]
    w[half:] = w[:half][::-1]
    return AngularQuadrature(mu=mu.tolist(), weights=w.tolist())


XSLibrary = Mapping[int, CrossSections]


def as_library(xs: Union[CrossSections, XSLibrary]) -> XSLibrary:
    if isinstance(xs, CrossSections):
        return {0: xs}
    return xs


@dataclass(frozen=True)
class CellData:
    """Cross sections gathered per cell (first axis) from a material library"""

    sigma_t: np.ndarray  # (n_cells, G)
    sigma_s: np.ndarray  # (n_cells, G_from, G_to)
    sigma_s1: np.ndarray
    nu_sigma_f: np.ndarray
    chi: np.ndarray
    D: np.ndarray
    sigma_r: np.ndarray

    @property
    def groups(self) -> int:
        return self.sigma_t.shape[1]


def gather_cells(mesh: SlabMesh, xs: Union[CrossSections, XSLibrary]) -> CellData:
    library = as_library(xs)
    missing = sorted(set(mesh.material) - set(library))
    if missing:
        raise CrossSectionError(f"mesh references unknown material ids {missing}")
    groups = {library[m].groups for m in set(mesh.material)}
    if len(groups) != 1:
        raise CrossSectionError("all materials on a mesh must share one group structure")
    G = groups.pop()

    def stack(getter):
        return np.stack([np.asarray(getter(library[m]), dtype=float) for m in mesh.material])

    zeros = [[0.0] * G for _ in range(G)]
    return CellData(
        sigma_t=stack(lambda x: x.sigma_t),
        sigma_s=stack(lambda x: x.sigma_s),
        sigma_s1=stack(lambda x: x.sigma_s1 if x.sigma_s1 is not None else zeros),
        nu_sigma_f=stack(lambda x: x.nu_sigma_f),
        chi=stack(lambda x: x.chi),
        D=stack(lambda x: x.diffusion_coefficient),
        sigma_r=stack(lambda x: x.sigma_r),
    )


def face_coupling(mesh: SlabMesh, D: np.ndarray) -> np.ndarray:
    """Fick coupling per face (n_cells+1,) for one group.

    Interior faces use the harmonic mean of the neighbouring cells; vacuum
    faces eliminate the face flux through phi/4 + D dphi/dn = 0, giving
    1 / (h/(2D) + 4); reflective faces carry no leakage.
    """
    h = mesh.h
    coupling = np.zeros(mesh.n_cells + 1)
    coupling[1:-1] = 2.0 * D[:-1] * D[1:] / (D[:-1] * h[1:] + D[1:] * h[:-1])
    if mesh.bc_left == "vacuum":
        coupling[0] = 1.0 / (h[0] / (2.0 * D[0]) + 4.0)
    if mesh.bc_right == "vacuum":
        coupling[-1] = 1.0 / (h[-1] / (2.0 * D[-1]) + 4.0)
    return coupling


def _diffusion_group_block(
    mesh: SlabMesh, cells: CellData, g: int, dhat: Optional[np.ndarray]
) -> SparseMatrix:
    """Leakage + removal (+ drift) block of group g; every position appears once"""
    n = mesh.n_cells
    h = mesh.h
    dt = face_coupling(mesh, cells.D[:, g])
    dh = np.zeros(n + 1) if dhat is None else np.asarray(dhat[:, g], dtype=float)

    diag = cells.sigma_r[:, g] * h
    diag[:-1] += dt[1:-1] - dh[1:-1]
    diag[1:] += dt[1:-1] + dh[1:-1]
    diag[0] += dt[0] + dh[0]
    diag[-1] += dt[-1] + dh[-1]
    upper = -dt[1:-1] - dh[1:-1]
    lower = -dt[1:-1] + dh[1:-1]

    idx = np.arange(n)
    rows = np.concatenate([idx, idx[:-1], idx[1:]])
    cols = np.concatenate([idx, idx[1:], idx[:-1]])
    vals = np.concatenate([diag, upper, lower])
    return SparseMatrix.assemble(rows, cols, vals, (n, n))


@dataclass(frozen=True)
class DiffusionOperators:
    A: SparseMatrix
    B: SparseMatrix


def assemble_diffusion_operators(
    mesh: SlabMesh, xs: Union[CrossSections, XSLibrary], closure=None
) -> DiffusionOperators:
    """Loss operator A (leakage, removal, minus inscatter) and fission operator B.

    `closure` may carry drift coefficients `dhat` of shape (n_cells+1, G);
    with it A becomes the closed, nonsymmetric low-order operator.
    """
    cells = gather_cells(mesh, xs)
    dhat = None if closure is None else closure.dhat
    n, G = mesh.n_cells, cells.groups
    h = mesh.h

    blocks = [_diffusion_group_block(mesh, cells, g, dhat) for g in range(G)]
    base = block_diag(blocks)
    rows = [np.repeat(np.arange(base.n_rows), np.diff(base.row_offsets))]
    cols = [base.col_indices]
    vals = [base.values]

    b_rows, b_cols, b_vals = [], [], []
    idx = np.arange(n)
    for g in range(G):
        for gp in range(G):
            if gp != g:
                scatter = cells.sigma_s[:, gp, g] * h
                keep = scatter != 0
                rows.append(g * n + idx[keep])
                cols.append(gp * n + idx[keep])
                vals.append(-scatter[keep])
            fission = cells.chi[:, g] * cells.nu_sigma_f[:, gp] * h
            keep = fission != 0
            b_rows.append(g * n + idx[keep])
            b_cols.append(gp * n + idx[keep])
            b_vals.append(fission[keep])

    size = G * n
    A = SparseMatrix.assemble(
        np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (size, size)
    )
    B = SparseMatrix.assemble(
        np.concatenate(b_rows), np.concatenate(b_cols), np.concatenate(b_vals), (size, size)
    )
    return DiffusionOperators(A=A, B=B)


def assemble_diffusion_preconditioner(
    mesh: SlabMesh, xs: Union[CrossSections, XSLibrary], closure=None
) -> MultiComponentMatrix:
    """Energy-decoupled preconditioning matrix: one component per group"""
    cells = gather_cells(mesh, xs)
    dhat = None if closure is None else closure.dhat
    blocks = [_diffusion_group_block(mesh, cells, g, dhat) for g in range(cells.groups)]
    return MultiComponentMatrix.from_blocks(blocks)


def assemble_direction_block(mesh: SlabMesh, sigma_t: np.ndarray, mu: float) -> SparseMatrix:
    """Upwind streaming + collision for one direction: (|mu| + sigma_t h) on the
    diagonal, -|mu| coupling to the upwind neighbour. Inflow terms are left out."""
    if mu == 0.0:
        raise QuadratureError("a direction with mu = 0 cannot be upwinded")
    n = mesh.n_cells
    idx = np.arange(n)
    diag = abs(mu) + np.asarray(sigma_t, dtype=float) * mesh.h
    if mu > 0:
        rows, cols = idx[1:], idx[:-1]
    else:
        rows, cols = idx[:-1], idx[1:]
    return SparseMatrix.assemble(
        np.concatenate([idx, rows]),
        np.concatenate([idx, cols]),
        np.concatenate([diag, np.full(n - 1, -abs(mu))]),
        (n, n),
    )


@dataclass(frozen=True)
class TransportOperator:
    """L (block diagonal over (group, direction)) plus reflective coupling R"""

    L: MultiComponentMatrix
    R: SparseMatrix
    groups: int
    n_directions: int
    n_cells: int

    @property
    def size(self) -> int:
        return self.L.n_rows

    def apply(self, psi) -> np.ndarray:
        return spmv(self.L.full, psi) + spmv(self.R, psi)

    def matrix(self) -> SparseMatrix:
        return SparseMatrix.from_scipy(self.L.full.csr + self.R.csr)

    def index(self, g: int, n: int, c: int) -> int:
        return (g * self.n_directions + n) * self.n_cells + c


def assemble_transport_operator(
    mesh: SlabMesh, xs: Union[CrossSections, XSLibrary], quad: AngularQuadrature
) -> TransportOperator:
    cells = gather_cells(mesh, xs)
    G, N, n = cells.groups, quad.n_directions, mesh.n_cells
    mu = quad.mu_array
    if np.any(mu == 0.0):
        raise QuadratureError("quadrature contains a zero direction")

    blocks = []
    r_rows, r_cols, r_vals = [], [], []
    for g in range(G):
        for d in range(N):
            blocks.append(assemble_direction_block(mesh, cells.sigma_t[:, g], mu[d]))
            row_base = (g * N + d) * n
            if mu[d] > 0 and mesh.bc_left == "reflective":
                col_base = (g * N + quad.mirror(d)) * n
                r_rows.append(row_base)
                r_cols.append(col_base)
                r_vals.append(-mu[d])
            elif mu[d] < 0 and mesh.bc_right == "reflective":
                col_base = (g * N + quad.mirror(d)) * n
                r_rows.append(row_base + n - 1)
                r_cols.append(col_base + n - 1)
                r_vals.append(mu[d])

    size = G * N * n
    R = SparseMatrix.assemble(r_rows, r_cols, r_vals, (size, size))
    return TransportOperator(
        L=MultiComponentMatrix.from_blocks(blocks), R=R, groups=G, n_directions=N, n_cells=n
    )


def _angular_view(psi, quad: AngularQuadrature, G: int, n_cells: int) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    expected = G * quad.n_directions * n_cells
    if psi.ndim != 1 or psi.size != expected:
        raise DimensionError(f"angular flux must have {expected} entries, got {psi.size}")
    return psi.reshape(G, quad.n_directions, n_cells)


def scalar_flux(psi, quad: AngularQuadrature, G: int, n_cells: int) -> np.ndarray:
    view = _angular_view(psi, quad, G, n_cells)
    return np.einsum("n,gnc->gc", quad.w_array, view).ravel()


def cell_current(psi, quad: AngularQuadrature, G: int, n_cells: int) -> np.ndarray:
    view = _angular_view(psi, quad, G, n_cells)
    return np.einsum("n,gnc->gc", quad.w_array * quad.mu_array, view).ravel()


def face_angular_flux(psi, quad: AngularQuadrature, mesh: SlabMesh, G: int) -> np.ndarray:
    """Upwind face values (G, N, n_cells+1), consistent with the transport stencil"""
    n = mesh.n_cells
    view = _angular_view(psi, quad, G, n)
    mu = quad.mu_array
    faces = np.zeros((G, quad.n_directions, n + 1))
    for d in range(quad.n_directions):
        if mu[d] > 0:
            faces[:, d, 1:] = view[:, d, :]
            if mesh.bc_left == "reflective":
                faces[:, d, 0] = view[:, quad.mirror(d), 0]
        else:
            faces[:, d, :-1] = view[:, d, :]
            if mesh.bc_right == "reflective":
                faces[:, d, -1] = view[:, quad.mirror(d), -1]
    return faces


def face_current(psi, quad: AngularQuadrature, mesh: SlabMesh, G: int) -> np.ndarray:
    """Net rightward current per face, shape (n_cells+1, G)"""
    faces = face_angular_flux(psi, quad, mesh, G)
    return np.einsum("n,gnf->fg", quad.w_array * quad.mu_array, faces)


def tau(sigma_t: float, h: float, c: float = 1.0, varsigma: float = 0.5) -> float:
    """Stabilization parameter; void-safe (sigma_t = 0 takes the h/varsigma branch)"""
    if h <= 0 or c <= 0 or varsigma <= 0 or sigma_t < 0:
        raise ValueError("tau needs sigma_t >= 0 and positive h, c, varsigma")
    if sigma_t > 0 and c * h * sigma_t >= varsigma:
        return 1.0 / (c * sigma_t)
    return h / varsigma


def _isotropic_expand(density: np.ndarray, mesh: SlabMesh, quad: AngularQuadrature) -> np.ndarray:
    """Per-(g, c) isotropic source density -> transport right-hand side.

    Each direction receives h * density / 2 since the weights sum to 2.
    """
    G = density.shape[0]
    per_direction = 0.5 * density * mesh.h[None, :]
    return np.broadcast_to(
        per_direction[:, None, :], (G, quad.n_directions, mesh.n_cells)
    ).ravel().copy()


def scattering_source(
    phi, mesh: SlabMesh, xs: Union[CrossSections, XSLibrary], quad: AngularQuadrature
) -> np.ndarray:
    cells = gather_cells(mesh, xs)
    G, n = cells.groups, mesh.n_cells
    flux = as_vector(phi, G * n).reshape(G, n)
    density = np.einsum("cpg,pc->gc", cells.sigma_s, flux)
    return _isotropic_expand(density, mesh, quad)


def fission_source(
    phi, mesh: SlabMesh, xs: Union[CrossSections, XSLibrary], quad: AngularQuadrature
) -> np.ndarray:
    cells = gather_cells(mesh, xs)
    G, n = cells.groups, mesh.n_cells
    flux = as_vector(phi, G * n).reshape(G, n)
    production = np.einsum("cp,pc->c", cells.nu_sigma_f, flux)
    density = cells.chi.T * production[None, :]
    return _isotropic_expand(density, mesh, quad)


def moment_matrix(quad: AngularQuadrature, G: int, n_cells: int) -> SparseMatrix:
    """W with scalar_flux(psi) = W psi"""
    N = quad.n_directions
    g, n, c = np.meshgrid(np.arange(G), np.arange(N), np.arange(n_cells), indexing="ij")
    rows = (g * n_cells + c).ravel()
    cols = ((g * N + n) * n_cells + c).ravel()
    vals = quad.w_array[n.ravel()]
    return SparseMatrix.assemble(rows, cols, vals, (G * n_cells, G * N * n_cells))


def isotropic_expansion_matrix(mesh: SlabMesh, quad: AngularQuadrature, G: int) -> SparseMatrix:
    """E mapping a per-(g, c) isotropic density to the transport right-hand side"""
    N, n_cells = quad.n_directions, mesh.n_cells
    g, n, c = np.meshgrid(np.arange(G), np.arange(N), np.arange(n_cells), indexing="ij")
    rows = ((g * N + n) * n_cells + c).ravel()
    cols = (g * n_cells + c).ravel()
    vals = 0.5 * mesh.h[c.ravel()]
    return SparseMatrix.assemble(rows, cols, vals, (G * N * n_cells, G * n_cells))


def transport_source_operators(
    mesh: SlabMesh, xs: Union[CrossSections, XSLibrary], quad: AngularQuadrature
):
    """Sparse (S, F) with scattering_source(W psi) = S psi and fission_source(W psi) = F psi"""
    cells = gather_cells(mesh, xs)
    G, n = cells.groups, mesh.n_cells
    idx = np.arange(n)
    s_rows, s_cols, s_vals, f_rows, f_cols, f_vals = [], [], [], [], [], []
    for g in range(G):
        for gp in range(G):
            scatter = cells.sigma_s[:, gp, g]
            keep = scatter != 0
            s_rows.append(g * n + idx[keep])
            s_cols.append(gp * n + idx[keep])
            s_vals.append(scatter[keep])
            fission = cells.chi[:, g] * cells.nu_sigma_f[:, gp]
            keep = fission != 0
            f_rows.append(g * n + idx[keep])
            f_cols.append(gp * n + idx[keep])
            f_vals.append(fission[keep])
    size = G * n
    sigma = SparseMatrix.assemble(
        np.concatenate(s_rows), np.concatenate(s_cols), np.concatenate(s_vals), (size, size)
    )
    production = SparseMatrix.assemble(
        np.concatenate(f_rows), np.concatenate(f_cols), np.concatenate(f_vals), (size, size)
    )
    E = isotropic_expansion_matrix(mesh, quad, G).csr
    W = moment_matrix(quad, G, n).csr
    S = SparseMatrix.from_scipy(E @ sigma.csr @ W)
    F = SparseMatrix.from_scipy(E @ production.csr @ W)
    return S, F
