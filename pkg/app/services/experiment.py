"""
Experiment orchestration: synthetic twin scenarios, M independent filter
repeats in parallel, cross-repeat averaging, scoring and output files.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional
import numpy as np
from joblib import Parallel, delayed
import logging

from app.config import settings
from app.models.ocean import DrifterSet, SwGrid
from app.models.request import RunConfig, SwConfig
from app.models.response import RepeatStatus, RunReport
from app.models.state import ObsVector, PredictedLocations, TimeGrid
from app.services.drifters import DrifterObservationModel
from app.services.fixtures import SwFixture, load_sw_fixture, make_synthetic_sw_fixture
from app.services.linear_benchmark import build_linear_scenario
from app.services.linear_gaussian import InnovationCovarianceError, accuracy_metric
from app.services.output import (
    emit_histogram,
    emit_snapshot,
    histogram_frame,
    step_frame,
    timing_frame,
    write_csv,
    write_report,
)
from app.services.shallow_water import CFLViolationError, NegativeDepthError, ShallowWaterTransition
from app.services.sine_noise import SineNoiseSpec
from app.services.smcmc import FilterResult, run_filter
from app.services.state_space import FlowBlowUpError, ObservationModel, TransitionModel, simulate_trajectory
from app.utils.helpers import NonFiniteError
from app.utils.metrics import counted_call, metrics
from app.utils.rng import DATA_STREAM, FILTER_STREAM, REFERENCE_STREAM, make_rng
from app.utils.timing import Stopwatch

logger = logging.getLogger(__name__)


class RepeatFailedError(RuntimeError):
    """At least one filter repeat of an experiment failed"""


# numerical failures during a run; they subclass ValueError but are not configuration errors
RUNTIME_ERRORS = (CFLViolationError, NegativeDepthError, NonFiniteError, InnovationCovarianceError)


@dataclass
class Scenario:
    model: TransitionModel
    obs: ObservationModel
    time_grid: TimeGrid
    states: np.ndarray
    observations: List[ObsVector]
    z0: np.ndarray
    sigma_y: float
    reference: np.ndarray
    reference_kind: str
    mode: str = "known"
    sw_grid: Optional[SwGrid] = None
    tracks: Optional[List[DrifterSet]] = None

    @property
    def drifters0(self) -> Optional[DrifterSet]:
        return self.tracks[0] if self.tracks else None


def build_sw_model(cfg: SwConfig, fixture: SwFixture, time_grid: TimeGrid) -> ShallowWaterTransition:
    noise = SineNoiseSpec(nx=fixture.grid.nx, ny=fixture.grid.ny, J=cfg.J, sigma=cfg.sigma)
    return ShallowWaterTransition(
        fixture.params, fixture.grid, fixture.bc, time_grid, noise,
        integrator=cfg.integrator, interpolation=cfg.interpolation,
    )


def build_scenario(cfg: RunConfig) -> Scenario:
    """Model, hidden truth and observations for the configured experiment"""
    if cfg.experiment in ("linear", "linear-partial"):
        lin = build_linear_scenario(cfg.linear, cfg.n_obs, cfg.data_seed)
        return Scenario(
            model=lin.model.transition(), obs=lin.model.observation(), time_grid=lin.grid,
            states=lin.truth.states, observations=lin.truth.observations, z0=np.array(lin.model.z0),
            sigma_y=cfg.linear.sigma_y, reference=lin.kf_means, reference_kind="kalman",
        )

    sw = cfg.sw
    rng = make_rng(cfg.data_seed, DATA_STREAM)
    fixture = load_sw_fixture(sw.fixture) if sw.fixture is not None else make_synthetic_sw_fixture(sw, rng)
    time_grid = TimeGrid.uniform(cfg.n_obs, sw.L, sw.tau)
    model = build_sw_model(sw, fixture, time_grid)
    sigma_y = sw.sigma_y_per_drifter if sw.sigma_y_per_drifter is not None else sw.sigma_y
    obs = DrifterObservationModel(fixture.grid, sigma_y, fixture.drifters.N_d)
    z0 = fixture.state0.to_vector(fixture.grid)
    truth = simulate_trajectory(model, obs, time_grid, z0, rng, drifters=fixture.drifters)
    mode = "unknown" if cfg.experiment == "sw-unknown" else "known"
    return Scenario(
        model=model, obs=obs.with_tracks(truth.tracks) if mode == "known" else obs,
        time_grid=time_grid, states=truth.states, observations=truth.observations, z0=z0,
        sigma_y=float(np.mean(sigma_y)), reference=truth.states[1:], reference_kind="truth",
        mode=mode, sw_grid=fixture.grid, tracks=truth.tracks,
    )


def free_run(
    model: TransitionModel,
    time_grid: TimeGrid,
    z0: np.ndarray,
    rng: np.random.Generator,
    sign: float = 1.0,
) -> np.ndarray:
    """Noise-driven model run without data, states at t_0..t_n"""
    z = np.array(z0, dtype=float)
    path = [z]
    for k in range(1, time_grid.n_obs + 1):
        try:
            z = model.flow(z, k) + sign * model.noise.sample(rng)
        except NonFiniteError as e:
            raise FlowBlowUpError(k, str(e)) from e
        if not np.all(np.isfinite(z)):
            raise FlowBlowUpError(k)
        path.append(z)
    return np.stack(path)


def compare_prior_reference(
    model: TransitionModel,
    time_grid: TimeGrid,
    z0: np.ndarray,
    K: int,
    seed: int,
    antithetic: bool = False,
) -> np.ndarray:
    """
    Mean of K free runs from z0, shape (n+1, d)

    With antithetic=True runs 2p and 2p+1 share one noise stream with
    opposite signs.
    """
    if K < 2:
        raise ValueError(f"the prior reference needs K >= 2 runs, got {K}")
    runs = []
    for r in range(K):
        if antithetic:
            rng = make_rng(seed, REFERENCE_STREAM, r // 2)
            sign = 1.0 if r % 2 == 0 else -1.0
        else:
            rng = make_rng(seed, REFERENCE_STREAM, r)
            sign = 1.0
        runs.append(free_run(model, time_grid, z0, rng, sign))
    return np.mean(runs, axis=0)


def prior_tracks(model: ShallowWaterTransition, reference: np.ndarray, drifters0: DrifterSet) -> List[DrifterSet]:
    """Drifters advected along the prior reference mean"""
    tracks = [drifters0]
    for k in range(1, reference.shape[0]):
        _, moved = model.flow_with_drifters(reference[k - 1], k, tracks[-1])
        tracks.append(moved)
    return tracks


@dataclass
class RepeatOutcome:
    repeat: int
    seed: int
    status: str
    result: Optional[FilterResult] = None
    seconds: float = 0.0
    message: Optional[str] = None


def filter_repeat(cfg: RunConfig, scenario: Scenario, m: int) -> RepeatOutcome:
    """One SMCMC repeat with seed seed_base + m; failures are reported, not raised"""
    seed = cfg.seed_base + m
    try:
        with Stopwatch() as sw:
            result = run_filter(
                scenario.model, scenario.obs, scenario.time_grid, cfg.rwm, scenario.observations,
                make_rng(seed, FILTER_STREAM), scenario.z0, mode=scenario.mode, drifters0=scenario.drifters0,
            )
        logger.info(f"Repeat {m} (seed {seed}) finished in {sw.seconds:.1f}s")
        return RepeatOutcome(repeat=m, seed=seed, status="ok", result=result, seconds=sw.seconds)
    except Exception as e:
        logger.error(f"Repeat {m} (seed {seed}) failed: {e}", exc_info=True)
        metrics.record_error(type(e).__name__)
        return RepeatOutcome(repeat=m, seed=seed, status="error", message=str(e))


def _field_rmse(errors: np.ndarray, grid: SwGrid) -> Dict[str, float]:
    blocks = errors.reshape(errors.shape[0], 3, grid.cells)
    return {name: float(np.sqrt(np.mean(blocks[:, b] ** 2))) for b, name in enumerate(("eta", "u", "v"))}


def _track_rmse_cells(predicted: List[np.ndarray], true: List[DrifterSet], grid: SwGrid) -> float:
    diffs = np.stack([p - t.positions for p, t in zip(predicted, true)])
    cells = diffs / np.array([grid.dx, grid.dy])
    return float(np.sqrt(np.mean(np.sum(cells ** 2, axis=-1))))


def run_experiment(cfg: RunConfig, output_dir: Optional[Path] = None, n_jobs: Optional[int] = None) -> RunReport:
    """
    Run M repeats, average their filter means, score and write outputs

    Linear experiments are scored against the Kalman mean, shallow-water
    twins against the hidden truth (plus the free-run reference).
    """
    out = Path(output_dir or cfg.output_dir or settings.output_dir / cfg.experiment)
    n_jobs = n_jobs or cfg.n_jobs or settings.n_jobs
    logger.info(f"Starting {cfg.experiment}: n={cfg.n_obs}, M={cfg.repeats}, seed_base={cfg.seed_base}")

    with Stopwatch() as total:
        scenario = build_scenario(cfg)
        outcomes = []
        for outcome, counts in Parallel(n_jobs=n_jobs)(
            delayed(counted_call)(filter_repeat, cfg, scenario, m) for m in range(cfg.repeats)
        ):
            metrics.absorb(counts)
            outcomes.append(outcome)
        report = _assemble_report(cfg, scenario, outcomes, out)
    report.wall_clock_s = total.seconds
    report.outputs["report"] = str(out / "report.json")
    write_report(report, out / "report.json")
    logger.info(f"{cfg.experiment} finished with status {report.status} in {total.seconds:.1f}s")
    return report


def _assemble_report(cfg: RunConfig, scenario: Scenario, outcomes: List[RepeatOutcome], out: Path) -> RunReport:
    statuses = []
    outputs: Dict[str, str] = {}
    ok = [o for o in outcomes if o.status == "ok"]
    for o in outcomes:
        statuses.append(RepeatStatus(
            repeat=o.repeat, seed=o.seed, status=o.status, message=o.message, wall_clock_s=o.seconds,
            mean_acceptance=o.result.mean_acceptance() if o.result else None,
        ))
        if o.result is not None:
            rdir = out / f"repeat_{o.repeat:03d}"
            ks = [dg.k for dg in o.result.diagnostics]
            write_csv(step_frame(o.result.means, o.result.diagnostics, cfg.mean_columns), rdir / "steps.csv")
            write_csv(timing_frame(ks, o.result.wall_ms), rdir / "timing.csv")

    report = RunReport(
        status="ok" if len(ok) == len(outcomes) else "error",
        experiment=cfg.experiment, n_obs=cfg.n_obs, d=scenario.z0.size, repeats=statuses,
        reference=scenario.reference_kind,
    )
    if not ok or cfg.n_obs == 0:
        report.outputs = outputs
        return report

    # averaging happens before any thresholding
    means = np.mean([o.result.means for o in ok], axis=0)
    errors = means - scenario.reference
    report.accuracy = accuracy_metric(means, scenario.reference, scenario.sigma_y)
    report.histogram = emit_histogram(errors, scenario.sigma_y, cfg.histogram_bins)
    diags = [dg for o in ok for dg in o.result.diagnostics]
    report.diagnostics_summary = {
        "acceptance_rate": float(np.mean([dg.acceptance_rate for dg in diags])),
        "lag1_autocorrelation": float(np.mean([dg.lag1_autocorrelation for dg in diags])),
        "mean_se": float(np.mean([dg.mean_se for dg in diags])),
        "unique_ancestors": float(np.mean([dg.unique_ancestors for dg in diags])),
        "flow_evaluations": float(np.mean([dg.flow_evaluations for dg in diags])),
        "zero_acceptance_steps": float(sum(dg.zero_acceptance for dg in diags)),
    }
    mean_frame = step_frame(means, ok[0].result.diagnostics, cfg.mean_columns)
    outputs["filter_mean"] = str(write_csv(mean_frame[["k"] + [c for c in mean_frame if c.startswith("mean_")]],
                                           out / "filter_mean.csv"))
    outputs["histogram"] = str(write_csv(histogram_frame(report.histogram), out / "histogram.csv"))

    if scenario.sw_grid is not None:
        grid = scenario.sw_grid
        sw = cfg.sw
        reference = compare_prior_reference(
            scenario.model, scenario.time_grid, scenario.z0, sw.reference_runs, cfg.data_seed, sw.antithetic
        )
        report.rmse = _field_rmse(errors, grid)
        report.free_run_rmse = _field_rmse(reference[1:] - scenario.reference, grid)
        tracks: Dict[str, list] = {"true": scenario.tracks}
        track_times = list(range(cfg.n_obs + 1))
        if scenario.mode == "unknown":
            predicted = [
                np.mean([o.result.locations[k].positions for o in ok], axis=0) for k in range(cfg.n_obs)
            ]
            report.track_rmse_cells = _track_rmse_cells(predicted, scenario.tracks[1:], grid)
            ids = scenario.tracks[0].ids
            tracks["predicted"] = [scenario.tracks[0]] + [
                PredictedLocations(positions=p, k=k + 1, ids=ids) for k, p in enumerate(predicted)
            ]
            tracks["prior"] = prior_tracks(scenario.model, reference, scenario.tracks[0])
        for k in cfg.snapshot_times:
            truth_fields = grid.unvectorize(scenario.states[k])
            filt = grid.unvectorize(means[k - 1]) if k >= 1 else truth_fields
            fields = {}
            for b, name in enumerate(("eta", "u", "v")):
                fields[f"{name}_true"] = truth_fields[b]
                fields[f"{name}_filter"] = filt[b]
                fields[f"{name}_error"] = filt[b] - truth_fields[b]
            outputs.update(emit_snapshot(fields, grid, tracks, track_times, k, out))
    report.outputs = outputs
    return report


def diagnose(cfg: RunConfig, steps: int = 3) -> Dict:
    """Short single-repeat run returning per-step chain diagnostics and the metrics summary"""
    short = cfg.model_copy(update={"n_obs": min(cfg.n_obs, steps), "repeats": 1, "snapshot_times": []})
    scenario = build_scenario(short)
    outcome = filter_repeat(short, scenario, 0)
    if outcome.status != "ok":
        raise RepeatFailedError(outcome.message)
    return {
        "diagnostics": [dg.model_dump() for dg in outcome.result.diagnostics],
        "metrics": metrics.get_summary(),
    }
