"""Request/response models for the design service."""

from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, Field

Mode = Literal["ee", "rate", "disjoint", "isolated"]


class SolveRequest(BaseModel):
    config: dict[str, Any]
    mode: Mode = "ee"
    rho_db: Optional[float] = None      # overrides statistics.min_sdr_db
    seed: Optional[int] = None          # defaults to montecarlo.base_seed
    include_trace: bool = False


class SolveResponse(BaseModel):
    status: str
    mode: Mode
    seed: int
    rho_db: float
    ee_bits_per_joule: Optional[float]
    rate_bps: Optional[float]
    comm_power_w: Optional[float]
    radar_power_w: Optional[float]
    min_sdr_margin_db: Optional[float]
    outer_iters: int
    wall_ms: float
    trace: Optional[list[dict[str, float]]] = None


class FeasibilityRequest(BaseModel):
    config: dict[str, Any]
    seed: Optional[int] = None


class CellCeiling(BaseModel):
    cell: tuple[int, int]
    ceiling_db: float
    rho_db: float


class FeasibilityResponse(BaseModel):
    feasible: bool
    overall_ceiling_db: float
    cells: list[CellCeiling]


class ValidateSdrRequest(BaseModel):
    config: dict[str, Any]
    draws: int = Field(default=100000, ge=0)
    seed: Optional[int] = None
    rho_db: Optional[float] = None


class CellDeviation(BaseModel):
    cell: tuple[int, int]
    analytic: float
    empirical: float
    rel_deviation: float


class ValidateSdrResponse(BaseModel):
    draws: int
    max_rel_deviation: float
    cells: list[CellDeviation]


class SweepRequest(BaseModel):
    config: dict[str, Any]
    out_dir: Optional[str] = None
    jobs: Optional[int] = Field(default=None, ge=1)
    include_trace: bool = False


class SweepResponse(BaseModel):
    records: int
    points: int
    runs_csv: str                   # full CSV text, one row per run
    aggregate_csv: str
    paths: dict[str, str]


class HealthResponse(BaseModel):
    status: str
    version: str
