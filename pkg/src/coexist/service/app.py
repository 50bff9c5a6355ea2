"""FastAPI service exposing the joint-design solver.

The handlers below are plain functions over the request models, so the
CLI can call them in-process; the FastAPI app is a thin routing layer on
top.  Infeasible instances are valid outcomes and come back as normal
responses with ``status="infeasible"``; malformed configurations map to
HTTP 400.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__, experiments, solver
from ..errors import ConfigError, ConvergenceFailure, Infeasible
from ..scenario import (
    linear_to_db,
    parse_config,
    scenario_from_config,
)
from . import schemas


def _load(config_raw: dict):
    try:
        return parse_config(config_raw)
    except ConfigError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


def handle_solve(req: schemas.SolveRequest) -> schemas.SolveResponse:
    config = _load(req.config)
    seed = req.seed if req.seed is not None else config.montecarlo.base_seed
    record = experiments.run_single(config, req.mode, seed,
                                    rho_db=req.rho_db,
                                    keep_trace=req.include_trace)

    def opt(x):
        return None if x != x else x

    return schemas.SolveResponse(
        status=record.status, mode=req.mode, seed=seed,
        rho_db=record.rho_db,
        ee_bits_per_joule=opt(record.ee), rate_bps=opt(record.rate),
        comm_power_w=opt(record.comm_power),
        radar_power_w=opt(record.radar_power),
        min_sdr_margin_db=opt(record.min_sdr_margin_db),
        outer_iters=record.outer_iters, wall_ms=record.wall_ms,
        trace=list(record.trace) if record.trace is not None else None)


def handle_feasibility(
        req: schemas.FeasibilityRequest) -> schemas.FeasibilityResponse:
    config = _load(req.config)
    seed = req.seed if req.seed is not None else config.montecarlo.base_seed
    scenario = scenario_from_config(config, seed)
    report = solver.check_feasibility(scenario)
    cells = [schemas.CellCeiling(
        cell=c, ceiling_db=linear_to_db(report.ceilings[c]),
        rho_db=linear_to_db(scenario.stats.min_sdr[c]))
        for c in scenario.stats.protected_cells]
    return schemas.FeasibilityResponse(
        feasible=report.feasible, overall_ceiling_db=report.overall_db,
        cells=cells)


def handle_validate_sdr(
        req: schemas.ValidateSdrRequest) -> schemas.ValidateSdrResponse:
    config = _load(req.config)
    seed = req.seed if req.seed is not None else config.montecarlo.base_seed
    scenario = scenario_from_config(config, seed, rho_db=req.rho_db)
    try:
        design = solver.block_coordinate_ascent(scenario, config.solver)
    except Infeasible as exc:
        raise HTTPException(status_code=409, detail=str(exc)) from exc
    report = experiments.validate_sdr(scenario, design, req.draws,
                                      seed=seed)
    cells = [schemas.CellDeviation(cell=c, analytic=v[0], empirical=v[1],
                                   rel_deviation=v[2])
             for c, v in sorted(report.cells.items())]
    return schemas.ValidateSdrResponse(
        draws=report.draws, max_rel_deviation=report.max_rel_deviation,
        cells=cells)


def handle_sweep(req: schemas.SweepRequest) -> schemas.SweepResponse:
    config = _load(req.config)
    if config.sweep is None:
        raise HTTPException(status_code=400,
                            detail="config has no sweep section")
    result = experiments.run_sweep(config, out_dir=req.out_dir,
                                   jobs=req.jobs,
                                   keep_trace=req.include_trace)
    records = result["records"]
    runs_csv = experiments.RUNS_CSV_HEADER + "\n" + \
        "\n".join(r.csv_row() for r in records) + "\n"
    return schemas.SweepResponse(
        records=len(records),
        points=len(list(config.sweep.points())),
        runs_csv=runs_csv,
        aggregate_csv=experiments.aggregate_csv(result["aggregates"]),
        paths=result["paths"])


def create_app() -> FastAPI:
    app = FastAPI(title="coexist", version=__version__,
                  description="Joint MIMO codebook / radar design service")

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/solve", response_model=schemas.SolveResponse)
    def solve(req: schemas.SolveRequest):
        return handle_solve(req)

    @app.post("/feasibility", response_model=schemas.FeasibilityResponse)
    def feasibility(req: schemas.FeasibilityRequest):
        return handle_feasibility(req)

    @app.post("/validate-sdr", response_model=schemas.ValidateSdrResponse)
    def validate_sdr(req: schemas.ValidateSdrRequest):
        return handle_validate_sdr(req)

    @app.post("/sweep", response_model=schemas.SweepResponse)
    def sweep(req: schemas.SweepRequest):
        return handle_sweep(req)

    return app


app = create_app()
