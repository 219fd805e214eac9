"""
Timing and accuracy comparison of SMCMC against the ensemble filters on the
linear-Gaussian model, scored against the exact Kalman mean.
"""
from dataclasses import dataclass
from typing import List, Optional
import numpy as np
from joblib import Parallel, delayed
import logging

from app.config import settings
from app.models.request import BenchmarkConfig, LinearModelConfig, RwmConfig
from app.models.response import BenchmarkRow
from app.models.state import TimeGrid
from app.services.linear_gaussian import (
    LinearModel,
    accuracy_metric,
    kalman_filter,
    kalman_means,
    run_ensemble_filter,
)
from app.services.smcmc import run_filter
from app.services.state_space import Trajectory, simulate_trajectory
from app.utils.metrics import counted_call, metrics
from app.utils.rng import DATA_STREAM, ENSEMBLE_STREAM, FILTER_STREAM, make_rng
from app.utils.timing import Stopwatch

logger = logging.getLogger(__name__)


@dataclass
class LinearScenario:
    model: LinearModel
    grid: TimeGrid
    truth: Trajectory
    kf_means: np.ndarray


def build_linear_scenario(cfg: LinearModelConfig, n_obs: int, data_seed: int) -> LinearScenario:
    """Model, synthetic truth/observations and the Kalman reference for one d"""
    rng = make_rng(data_seed, DATA_STREAM, cfg.d)
    model = LinearModel.from_config(cfg, rng)
    grid = TimeGrid.uniform(n_obs, L=model.L, tau=1.0)
    truth = simulate_trajectory(model.transition(), model.observation(), grid, model.z0, rng)
    kf = kalman_means(kalman_filter(model, truth.observations)) if n_obs else np.zeros((0, model.d))
    return LinearScenario(model=model, grid=grid, truth=truth, kf_means=kf)


def smcmc_repeat(scenario: LinearScenario, rwm: RwmConfig, seed: int) -> np.ndarray:
    """Filter means of one SMCMC repeat with seed `seed`"""
    model = scenario.model
    result = run_filter(
        model.transition(), model.observation(), scenario.grid, rwm,
        scenario.truth.observations, make_rng(seed, FILTER_STREAM), model.z0,
    )
    return result.means


def ensemble_repeat(scenario: LinearScenario, method: str, cfg: BenchmarkConfig, seed: int) -> np.ndarray:
    ens = cfg.ensemble
    return run_ensemble_filter(
        method, scenario.model, scenario.truth.observations, ens.N_e,
        make_rng(seed, ENSEMBLE_STREAM), ens.inflation, ens.localization, ens.n_jobs,
    )


def _linear_config_for(cfg: BenchmarkConfig, d: int) -> LinearModelConfig:
    if d == cfg.linear.d:
        return cfg.linear
    side = int(round(np.sqrt(d)))
    grid_side = side if cfg.linear.grid_side is not None and side * side == d else None
    return cfg.linear.model_copy(update={"d": d, "grid_side": grid_side})


def benchmark_run(cfg: BenchmarkConfig, n_jobs: Optional[int] = None) -> List[BenchmarkRow]:
    """
    One row per (d, method): fraction of |filter mean - KF mean| <= fraction·σ_y and wall clock

    SMCMC means are averaged over `smcmc_repeats` before scoring; ensemble
    methods over `ensemble.repeats`.
    """
    n_jobs = n_jobs or settings.n_jobs
    threads = settings.thread_count()
    rows: List[BenchmarkRow] = []
    for d in cfg.dims or [cfg.linear.d]:
        lin = _linear_config_for(cfg, d)
        scenario = build_linear_scenario(lin, cfg.n_obs, cfg.data_seed)
        logger.info(f"Benchmark d={d}: {cfg.n_obs} steps, d_y={scenario.model.d_y}")

        with Stopwatch() as sw:
            runs = []
            for means, counts in Parallel(n_jobs=n_jobs)(
                delayed(counted_call)(smcmc_repeat, scenario, cfg.rwm, cfg.seed_base + m)
                for m in range(cfg.smcmc_repeats)
            ):
                metrics.absorb(counts)
                runs.append(means)
        fraction = accuracy_metric(np.mean(runs, axis=0), scenario.kf_means, lin.sigma_y, cfg.threshold_fraction)
        rows.append(BenchmarkRow(
            method="smcmc", d=d, size=f"{cfg.rwm.N}+{cfg.rwm.N_burn}", repeats=cfg.smcmc_repeats,
            fraction=fraction, wall_clock_s=sw.seconds, threads=threads,
        ))
        logger.info(f"smcmc d={d}: fraction={fraction:.3f}, {sw.seconds:.1f}s")

        for method in cfg.ensemble.methods:
            with Stopwatch() as sw:
                runs = Parallel(n_jobs=n_jobs)(
                    delayed(ensemble_repeat)(scenario, method, cfg, cfg.seed_base + m)
                    for m in range(cfg.ensemble.repeats)
                )
            fraction = accuracy_metric(
                np.mean(runs, axis=0), scenario.kf_means, lin.sigma_y, cfg.threshold_fraction
            )
            rows.append(BenchmarkRow(
                method=method, d=d, size=str(cfg.ensemble.N_e), repeats=cfg.ensemble.repeats,
                fraction=fraction, wall_clock_s=sw.seconds, threads=threads,
            ))
            logger.info(f"{method} d={d}: fraction={fraction:.3f}, {sw.seconds:.1f}s")
    return rows
