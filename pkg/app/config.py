from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import field_validator
from typing import Optional
from pathlib import Path
import os


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_prefix="SMCMC_", case_sensitive=False)

    # HTTP surface
    api_key: Optional[str] = None
    port: int = 8000
    max_concurrent_jobs: int = 2

    # Experiment defaults
    output_dir: Path = Path("runs")
    seed_base: int = 0
    data_seed: int = 2020
    repeats: int = 1
    n_jobs: int = 1

    # Logging / output
    log_level: str = "INFO"
    log_every: int = 10
    csv_float_format: str = "%.17g"

    @field_validator("n_jobs")
    @classmethod
    def validate_n_jobs(cls, v: int) -> int:
        """joblib convention: positive worker count or -1 for all cores"""
        if v == 0 or v < -1:
            raise ValueError("n_jobs must be a positive integer or -1")
        return v

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        level = v.upper()
        if level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Unknown log level: {v}")
        return level

    def thread_count(self) -> int:
        """Threads available to numerical kernels (OMP_NUM_THREADS wins when set)"""
        env_threads = os.environ.get("OMP_NUM_THREADS")
        if env_threads and env_threads.isdigit():
            return int(env_threads)
        return os.cpu_count() or 1


settings = Settings()
