from pydantic import BaseModel, Field
from typing import Dict, List, Optional


class ChainDiagnostics(BaseModel):
    k: int
    acceptance_rate: float = Field(ge=0.0, le=1.0)
    lag1_autocorrelation: float
    mean_se: float = 0.0
    unique_ancestors: int
    flow_evaluations: int = 0
    index_proposals: int = 0
    index_moves: int = 0
    zero_acceptance: bool = False
    sigma_prime: float = 0.0


class HistogramRow(BaseModel):
    left: float
    right: float
    count: int
    fraction: float


class Histogram(BaseModel):
    rows: List[HistogramRow]
    total: int
    fraction_below_half_sigma: float


class RepeatStatus(BaseModel):
    repeat: int
    seed: int
    status: str
    message: Optional[str] = None
    wall_clock_s: float = 0.0
    mean_acceptance: Optional[float] = None


class RunReport(BaseModel):
    status: str
    experiment: str
    n_obs: int
    d: int
    repeats: List[RepeatStatus]
    accuracy: Optional[float] = Field(None, description="fraction of |error| <= σ_y/2")
    reference: str = Field("truth", description="what the errors are measured against")
    rmse: Dict[str, float] = {}
    free_run_rmse: Dict[str, float] = {}
    track_rmse_cells: Optional[float] = None
    histogram: Optional[Histogram] = None
    diagnostics_summary: Dict[str, float] = {}
    wall_clock_s: float = 0.0
    outputs: Dict[str, str] = {}


class BenchmarkRow(BaseModel):
    method: str
    d: int
    size: str = Field(description="N_e for ensemble filters, N+N_burn for SMCMC")
    repeats: int
    fraction: float
    wall_clock_s: float
    threads: int
