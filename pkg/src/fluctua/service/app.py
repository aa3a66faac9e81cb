"""FastAPI application: POST /run, POST /oracle, GET /health.

Configuration problems surface as 422 with a diagnostics list; numerical
non-convergence is not an error at this layer, it travels in the row
flags so the client can decide on an exit code.
"""

from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import ConfigurationError, FluctuaError
from ..oracle import oracle_suite
from ..scenario import evaluate_scenario, parse_config
from .schemas import (
    OracleRequest,
    OracleResponse,
    OracleRow,
    ResultRow,
    RunRequest,
    RunResponse,
)

app = FastAPI(title="fluctua", version=__version__)


@app.exception_handler(ConfigurationError)
async def _configuration_error(request, exc):
    return JSONResponse(status_code=422,
                        content={"detail": {"diagnostics": [str(exc)]}})


@app.exception_handler(FluctuaError)
async def _model_error(request, exc):
    # non-configuration domain errors (singular modes, divergent series)
    # still stem from the posted problem description
    return JSONResponse(status_code=422,
                        content={"detail": {"diagnostics": [str(exc)]}})


@app.get("/health")
async def health():
    return {"status": "ok", "version": __version__}


@app.post("/run", response_model=RunResponse)
def run(request: RunRequest) -> RunResponse:
    spec = parse_config(request.config)
    rows = evaluate_scenario(spec, threads=request.threads)
    return RunResponse(rows=[ResultRow.from_row(r) for r in rows],
                       all_converged=all(r.converged for r in rows))


@app.post("/oracle", response_model=OracleResponse)
def oracle(request: OracleRequest) -> OracleResponse:
    if request.instances < 1:
        raise ConfigurationError("instances: must be >= 1")
    results = oracle_suite(request.seed, request.instances,
                           corrupt=request.corrupt)
    return OracleResponse(rows=[OracleRow.from_instance(r) for r in results],
                          all_ok=all(r.ok for r in results))
