from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import List, Literal, Optional
from pathlib import Path
import json
import math


class RwmConfig(BaseModel):
    """Random-walk Metropolis kernel on the (state, ancestor index) pair"""
    model_config = ConfigDict(extra="forbid")

    N: int = Field(500, ge=1, description="retained chain length (N)")
    N_burn: int = Field(100, ge=0, description="discarded burn-in steps (N_burn)")
    q: float = Field(0.33, description="index random-walk probability, q in (0, 1/2]")
    sigma_prime: Optional[float] = Field(
        None, description="proposal scale σ′; None picks 2.38/sqrt(d) times the one-step posterior scale"
    )
    index_proposal: Literal["hastings", "printed"] = Field(
        "hastings",
        description="'hastings' applies the full proposal ratio at the index boundaries; "
        "'printed' multiplies by q only when leaving a boundary index",
    )
    tune: bool = Field(False, description="run pilot chains to bring acceptance into tune_target")
    tune_target: List[float] = Field([0.2, 0.3], description="acceptance band for tuning")
    tune_rounds: int = Field(8, ge=1)
    tune_steps: int = Field(200, ge=10)
    location_paths: Optional[int] = Field(
        None, ge=1, description="flows averaged to predict drifter locations (None = all N)"
    )
    diag_coords: int = Field(10, ge=1, description="coordinates summarised by the lag-1 autocorrelation")

    @field_validator("q")
    @classmethod
    def validate_q(cls, v: float) -> float:
        if not 0.0 < v <= 0.5:
            raise ValueError(f"q must lie in (0, 1/2], got {v}")
        return v

    @field_validator("sigma_prime")
    @classmethod
    def validate_sigma_prime(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and not v > 0:
            raise ValueError(f"sigma_prime must be > 0, got {v}")
        return v

    @field_validator("tune_target")
    @classmethod
    def validate_target(cls, v: List[float]) -> List[float]:
        if len(v) != 2 or not 0.0 < v[0] < v[1] < 1.0:
            raise ValueError(f"tune_target must be [lo, hi] with 0 < lo < hi < 1, got {v}")
        return v


class LinearModelConfig(BaseModel):
    """Z_{n+1} = A Z_n + σ_z W_n, Y_m = C Z_{mL} + σ_y V_m with A = a·I"""
    model_config = ConfigDict(extra="forbid")

    d: int = Field(625, ge=1, description="state dimension d")
    a: float = Field(0.2, description="A = a·I")
    sigma_z: float = Field(0.05, gt=0, description="process noise σ_z")
    sigma_y: float = Field(0.05, gt=0, description="observation noise σ_y")
    L: int = Field(1, ge=1, description="transition steps per observation")
    r_hat: int = Field(1, ge=1, description="observe every r̂-th coordinate")
    z0_scale: float = Field(0.45, description="Z0^j ~ -z0_scale·U[0,1]")
    z0_fraction: float = Field(1.0, gt=0, le=1, description="only the first ⌊fraction·d⌋ coordinates are nonzero")
    grid_side: Optional[int] = Field(None, ge=1, description="N_s for a square grid d = N_s²")

    @field_validator("a")
    @classmethod
    def validate_spectral_radius(cls, v: float) -> float:
        if abs(v) > 1.0:
            raise ValueError(f"spectral radius |a| must be <= 1, got {v}")
        return v

    @model_validator(mode="after")
    def validate_grid(self) -> "LinearModelConfig":
        if self.grid_side is not None and self.grid_side ** 2 != self.d:
            raise ValueError(f"grid_side² must equal d, got {self.grid_side}² != {self.d}")
        if self.r_hat > self.d:
            raise ValueError(f"r_hat={self.r_hat} leaves no observed coordinate for d={self.d}")
        return self

    @classmethod
    def fully_observed(cls, d: int = 625, **overrides) -> "LinearModelConfig":
        return cls(d=d, **overrides)

    @classmethod
    def partially_observed_grid(cls, grid_side: int = 20, r_hat: int = 4, **overrides) -> "LinearModelConfig":
        params = dict(
            d=grid_side ** 2, grid_side=grid_side, r_hat=r_hat, a=-0.95,
            sigma_z=0.1, sigma_y=0.1, z0_scale=0.15, z0_fraction=1.0 / 3.0,
        )
        params.update(overrides)
        return cls(**params)


class LocalizationSpec(BaseModel):
    """Domain partition and observation tapering for the local EnKF"""
    model_config = ConfigDict(extra="forbid")

    n_subdomains: int = Field(1, ge=1, description="Γ, must divide d")
    radius: float = Field(math.inf, gt=0, description="localization radius in grid units")
    taper: Literal["gaspari_cohn", "exponential", "none"] = "gaspari_cohn"
    grid_side: Optional[int] = Field(None, ge=1, description="N_s of the square grid; None treats the state as 1-d")

    def validate_for(self, d: int) -> None:
        if d % self.n_subdomains:
            raise ValueError(f"Γ={self.n_subdomains} does not divide d={d}")
        if self.grid_side is not None and self.grid_side ** 2 != d:
            raise ValueError(f"grid_side² must equal d, got {self.grid_side}² != {d}")


class EnsembleConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    methods: List[Literal["enkf", "etkf", "estkf", "lenkf"]] = ["enkf", "etkf", "estkf"]
    N_e: int = Field(500, ge=2, description="ensemble size N_e")
    inflation: float = Field(1.0, gt=0, description="multiplicative prior inflation ρ")
    repeats: int = Field(1, ge=1)
    localization: Optional[LocalizationSpec] = None
    n_jobs: int = Field(1, description="joblib workers for subdomain analyses")


class SwConfig(BaseModel):
    """Shallow-water twin-experiment scenario; defaults are the 32x32 CI scale"""
    model_config = ConfigDict(extra="forbid")

    nx: int = Field(32, ge=3, description="N_x interior cells")
    ny: int = Field(32, ge=3, description="N_y interior cells")
    dx: float = Field(1.0e4, gt=0, description="Δ_x in metres")
    dy: float = Field(1.0e4, gt=0, description="Δ_y in metres")
    x_lo: float = 0.0
    y_lo: float = 0.0
    g: float = Field(9.81, gt=0)
    psi0_deg: float = Field(22.0, description="reference latitude ψ0 for f0 and β")
    omega: float = Field(7.29e-5, description="Earth rotation rate Ω")
    mean_depth: float = Field(100.0, gt=0, description="synthetic bathymetry depth at x_lo")
    depth_slope: float = Field(20.0, description="synthetic bathymetry increase across the domain")
    gyre_speed: float = Field(0.3, description="synthetic initial gyre velocity amplitude")
    tau: float = Field(60.0, gt=0, description="inner time step τ (s)")
    L: int = Field(10, ge=1, description="inner steps per observation interval")
    J: int = Field(8, ge=1, description="sine modes per axis")
    sigma: float = Field(2.0e-4, ge=0, description="noise scale σ of the sine modes")
    sigma_y: float = Field(1.45e-2, gt=0, description="observation noise σ_y")
    sigma_y_per_drifter: Optional[List[float]] = None
    n_drifters: int = Field(6, ge=1, description="N_d")
    integrator: Literal["heun", "euler"] = "heun"
    interpolation: Literal["bilinear", "nearest"] = "bilinear"
    fixture: Optional[Path] = Field(None, description="fixture manifest; None builds the synthetic scenario")
    reference_runs: int = Field(10, ge=2, description="K free runs averaged for the prior reference")
    antithetic: bool = False

    @model_validator(mode="after")
    def validate_modes(self) -> "SwConfig":
        if self.J > 1 and self.J - 1 > min(self.nx, self.ny) - 2:
            raise ValueError(f"J={self.J} sine modes need at least J+1 cells per axis")
        if self.sigma_y_per_drifter is not None:
            if len(self.sigma_y_per_drifter) != self.n_drifters:
                raise ValueError("sigma_y_per_drifter needs one entry per drifter")
            if any(s <= 0 for s in self.sigma_y_per_drifter):
                raise ValueError("per-drifter sigma_y must be > 0")
        return self

    @model_validator(mode="after")
    def validate_fixture(self) -> "SwConfig":
        if self.fixture is not None and not Path(self.fixture).exists():
            raise ValueError(f"fixture manifest not found: {self.fixture}")
        return self


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    experiment: Literal["linear", "linear-partial", "sw-known", "sw-unknown"]
    n_obs: int = Field(20, ge=0, description="number of observation times n (T)")
    linear: Optional[LinearModelConfig] = None
    sw: Optional[SwConfig] = None
    rwm: RwmConfig = RwmConfig()
    repeats: int = Field(1, ge=1, description="M independent repeats")
    seed_base: int = Field(0, ge=0, description="repeat m uses seed seed_base + m")
    data_seed: int = Field(2020, ge=0, description="seed of the synthetic truth and observations")
    output_dir: Optional[Path] = None
    snapshot_times: List[int] = []
    histogram_bins: int = Field(40, ge=1)
    mean_columns: Optional[int] = Field(None, ge=1, description="filter-mean columns in per-step CSV (None = all)")
    n_jobs: Optional[int] = Field(None, description="override of settings.n_jobs for repeats")

    @model_validator(mode="after")
    def fill_sections(self) -> "RunConfig":
        if self.experiment == "linear" and self.linear is None:
            self.linear = LinearModelConfig()
        if self.experiment == "linear-partial" and self.linear is None:
            self.linear = LinearModelConfig.partially_observed_grid()
        if self.experiment.startswith("sw") and self.sw is None:
            self.sw = SwConfig()
        for t in self.snapshot_times:
            if not 0 <= t <= self.n_obs:
                raise ValueError(f"snapshot time {t} outside 0..{self.n_obs}")
        return self

    @classmethod
    def from_file(cls, path: Path) -> "RunConfig":
        with open(path) as fh:
            return cls.model_validate(json.load(fh))


class BenchmarkConfig(BaseModel):
    """Linear-Gaussian comparison of SMCMC against ensemble filters"""
    model_config = ConfigDict(extra="forbid")

    linear: LinearModelConfig = LinearModelConfig()
    dims: Optional[List[int]] = Field(None, description="sweep over d; None runs linear.d only")
    n_obs: int = Field(500, ge=1, description="T")
    rwm: RwmConfig = RwmConfig(N=500, N_burn=280)
    smcmc_repeats: int = Field(26, ge=1)
    ensemble: EnsembleConfig = EnsembleConfig()
    threshold_fraction: float = Field(0.5, gt=0, description="errors counted below fraction·σ_y")
    seed_base: int = Field(0, ge=0)
    data_seed: int = Field(2020, ge=0)
    output_dir: Optional[Path] = None

    @classmethod
    def from_file(cls, path: Path) -> "BenchmarkConfig":
        with open(path) as fh:
            return cls.model_validate(json.load(fh))
