from functools import lru_cache

from fastapi import Depends, FastAPI, HTTPException
from pydantic import ValidationError

from app import __version__
from app.errors import ConfigError, CritkitError, CrossSectionError
from app.problem_loader import LocalProblemLoader, S3ProblemLoader
from app.run_models import (
    MaterialsResponse,
    ProblemSummary,
    ProblemsResponse,
    RunRequest,
    RunResponse,
    SolverConfig,
)
from app.runner import run
from app.settings import problem_bucket, problem_dir

app = FastAPI(
    title="critkit API",
    description="Criticality problems of the slab catalog and solver runs over them",
    version=__version__,
)


@lru_cache(maxsize=1)
def get_problem_loader():
    """S3 catalog when CRITKIT_PROBLEM_BUCKET is set, else the local problem directory"""
    bucket = problem_bucket()
    if bucket:
        return S3ProblemLoader(bucket_name=bucket)
    return LocalProblemLoader(problem_dir())


@app.get("/")
async def root():
    return {"service": "critkit", "version": __version__}


@app.get("/v1/problems", response_model=ProblemsResponse)
async def get_problems(loader=Depends(get_problem_loader)):
    """List all available problems"""
    return ProblemsResponse(problems=loader.get_problems())


@app.get("/v1/problems/{problem_id}", response_model=ProblemSummary)
async def get_problem(problem_id: str, loader=Depends(get_problem_loader)):
    problem = loader.get_problem_by_id(problem_id)
    if not problem:
        raise HTTPException(status_code=404, detail="Problem not found")
    return problem


@app.get("/v1/problems/{problem_id}/materials", response_model=MaterialsResponse)
async def get_materials(problem_id: str, loader=Depends(get_problem_loader)):
    """Cross sections of every material of a problem"""
    if not loader.get_problem_by_id(problem_id):
        raise HTTPException(status_code=404, detail="Problem not found")
    try:
        materials = loader.get_materials(problem_id)
    except ConfigError as e:
        raise HTTPException(status_code=400, detail=str(e))
    if materials is None:
        raise HTTPException(status_code=404, detail="Problem materials unavailable")
    return MaterialsResponse(problem_id=problem_id, materials=materials)


@app.post("/v1/problems/{problem_id}/runs", response_model=RunResponse)
def run_problem(problem_id: str, request: RunRequest, loader=Depends(get_problem_loader)):
    """Run a problem with solver overrides and return its metrics"""
    if not loader.get_problem_by_id(problem_id):
        raise HTTPException(status_code=404, detail="Problem not found")
    try:
        config = loader.get_config(problem_id, mode=request.mode)
    except ConfigError as e:
        raise HTTPException(status_code=400, detail=str(e))
    if config is None:
        raise HTTPException(status_code=404, detail="Problem configuration unavailable")

    try:
        solver = SolverConfig(**{**config.solver.model_dump(), **request.solver})
    except ValidationError as e:
        raise HTTPException(status_code=400, detail=f"invalid solver settings: {e.errors()[0]['msg']}")

    try:
        result = run(config.model_copy(update={"solver": solver}))
    except (ConfigError, CrossSectionError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    except CritkitError as e:
        raise HTTPException(status_code=422, detail=f"solver failure: {e}")

    return RunResponse(
        problem_id=problem_id,
        mode=config.mode,
        k=result.k,
        rows=result.rows,
        eps_history=result.eps_history,
    )
