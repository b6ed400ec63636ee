from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, model_validator

from app.discretization import BoundaryCondition, CrossSections, SlabMesh
from app.sgmasm import MultilevelParams

RunMode = Literal["nda", "transport-eigen", "diffusion-eigen", "bench"]
PreconditionerKind = Literal["sgmasm", "masm", "ras", "none"]

METRICS_COLUMNS = [
    "np",
    "delta",
    "theta",
    "agg",
    "mem_bytes",
    "its_newton",
    "its_linear",
    "its_sweep",
    "comp",
    "setup_nnz",
    "time_setup",
    "time_apply",
    "time_total",
]


class ProblemConfig(BaseModel):
    xs_file: str
    cells: Optional[int] = Field(None, ge=1)
    length: Optional[float] = Field(None, gt=0)
    widths: Optional[List[float]] = None
    materials: List[int] = [0]
    bc_left: BoundaryCondition = "vacuum"
    bc_right: BoundaryCondition = "vacuum"
    quadrature_order: int = Field(8, ge=2)
    groups: Optional[int] = Field(None, ge=1)

    class Config:
        extra = "forbid"

    @model_validator(mode="after")
    def check_geometry(self):
        if self.widths is None:
            if self.cells is None or self.length is None:
                raise ValueError("give either widths or both cells and length")
        elif self.cells is not None and self.cells != len(self.widths):
            raise ValueError(f"cells = {self.cells} but {len(self.widths)} widths given")
        n = len(self.widths) if self.widths is not None else self.cells
        if len(self.materials) not in (1, n):
            raise ValueError(f"materials must list one id or {n} ids")
        if self.quadrature_order % 2:
            raise ValueError("quadrature_order must be even")
        return self

    @property
    def n_cells(self) -> int:
        return len(self.widths) if self.widths is not None else self.cells

    def mesh(self) -> SlabMesh:
        n = self.n_cells
        widths = self.widths if self.widths is not None else [self.length / n] * n
        materials = self.materials * n if len(self.materials) == 1 else self.materials
        return SlabMesh(widths=widths, material=materials, bc_left=self.bc_left, bc_right=self.bc_right)


class SolverConfig(BaseModel):
    preconditioner: PreconditionerKind = "sgmasm"
    theta: float = Field(0.25, ge=0, lt=1)
    delta: int = Field(0, ge=0)
    agg: int = Field(0, ge=0)
    max_levels: int = Field(10, ge=1)
    min_coarse: int = Field(50, ge=1)
    restart: int = Field(30, ge=1)
    rtol_transport: float = Field(1e-5, gt=0)
    rtol_linear_diffusion: float = Field(1e-2, gt=0)
    newton_tol: float = Field(1e-3, gt=0)
    newton_atol: float = Field(1e-13, ge=0)
    max_newton: int = Field(20, ge=0)
    init_power_iters: int = Field(2, ge=1)
    nda_tol: float = Field(1e-6, gt=0)
    max_nda: int = Field(50, ge=1)
    np1: int = Field(1, ge=1)
    np2: int = Field(1, ge=1)
    component_index: int = Field(0, ge=0)
    closure_mode: Literal["drift", "saaf_functional"] = "drift"
    sweeps: int = Field(1, ge=1)
    omega: float = Field(1.0, gt=0, lt=2)

    class Config:
        extra = "forbid"
        json_schema_extra = {
            "example": {
                "preconditioner": "sgmasm",
                "theta": 0.25,
                "delta": 1,
                "agg": 0,
                "np1": 2,
                "np2": 2,
            }
        }

    def multilevel_params(self) -> MultilevelParams:
        return MultilevelParams(
            theta=self.theta,
            agg=self.agg,
            max_levels=self.max_levels,
            min_coarse=self.min_coarse,
            delta=self.delta,
            sweeps=self.sweeps,
            omega=self.omega,
            component_index=self.component_index,
            np1=self.np1,
            np2=self.np2,
        )


class BenchConfig(BaseModel):
    system: Literal["laplacian", "diffusion", "transport"] = "laplacian"
    size: int = Field(1025, ge=2)
    components: int = Field(1, ge=1)
    rtol: float = Field(1e-8, gt=0)

    class Config:
        extra = "forbid"


class SweepConfig(BaseModel):
    delta: Optional[List[int]] = None
    theta: Optional[List[float]] = None
    agg: Optional[List[int]] = None
    np1: Optional[List[int]] = None
    np2: Optional[List[int]] = None

    class Config:
        extra = "forbid"

    def points(self) -> List[Dict[str, float]]:
        """Cartesian product of the swept values, in field order"""
        points: List[Dict[str, float]] = [{}]
        for name in ("delta", "theta", "agg", "np1", "np2"):
            values = getattr(self, name)
            if values:
                points = [dict(p, **{name: v}) for p in points for v in values]
        return points


class RunConfig(BaseModel):
    problem: Optional[ProblemConfig] = None
    solver: SolverConfig = SolverConfig()
    bench: BenchConfig = BenchConfig()
    sweep: SweepConfig = SweepConfig()
    mode: RunMode = "nda"
    base_dir: Optional[str] = None

    @model_validator(mode="after")
    def check_mode(self):
        if self.mode != "bench" and self.problem is None:
            raise ValueError(f"mode {self.mode!r} needs a [problem] section")
        return self


class MetricsRow(BaseModel):
    np: int
    delta: int
    theta: float
    agg: int
    mem_bytes: int = Field(ge=0)
    its_newton: int = Field(ge=0)
    its_linear: int = Field(ge=0)
    its_sweep: int = Field(ge=0)
    comp: float = Field(ge=1.0)
    setup_nnz: int = Field(ge=0)
    time_setup: float
    time_apply: float
    time_total: float
    k: Optional[float] = None
    apply_count: int = 0
    picard_iterations: int = 0
    converged: bool = True

    class Config:
        json_schema_extra = {
            "example": {
                "np": 4,
                "delta": 1,
                "theta": 0.25,
                "agg": 0,
                "mem_bytes": 183456,
                "its_newton": 3,
                "its_linear": 14,
                "its_sweep": 42,
                "comp": 1.87,
                "setup_nnz": 4096,
                "time_setup": 0.012,
                "time_apply": 0.034,
                "time_total": 0.41,
                "k": 1.25,
                "apply_count": 56,
                "picard_iterations": 2,
                "converged": True,
            }
        }

    def csv_record(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in METRICS_COLUMNS}


class TimingRow(BaseModel):
    point: int
    setup: float = 0.0
    precond_apply: float = 0.0
    krylov: float = 0.0
    transport: float = 0.0
    function_eval: float = 0.0
    line_search: float = 0.0
    total: float = 0.0


class ProblemSummary(BaseModel):
    problem_id: str
    name: str
    description: str
    groups: int
    cells: int
    quadrature_order: int
    materials: List[int]

    class Config:
        json_schema_extra = {
            "example": {
                "problem_id": "two_group_slab",
                "name": "Two-group bare slab",
                "description": "20 cm fissile slab with vacuum on both faces, S8",
                "groups": 2,
                "cells": 16,
                "quadrature_order": 8,
                "materials": [0],
            }
        }


class ProblemsResponse(BaseModel):
    problems: List[ProblemSummary]


class MaterialsResponse(BaseModel):
    problem_id: str
    materials: Dict[int, CrossSections]


class RunRequest(BaseModel):
    mode: RunMode = "nda"
    solver: Dict[str, float | int | str] = {}

    class Config:
        json_schema_extra = {
            "example": {"mode": "nda", "solver": {"preconditioner": "sgmasm", "delta": 1}}
        }


class RunResponse(BaseModel):
    problem_id: str
    mode: RunMode
    k: Optional[float]
    rows: List[MetricsRow]
    eps_history: List[float] = []
