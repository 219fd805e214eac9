"""
Sequential MCMC filtering.

At every observation time a random-walk Metropolis chain samples the pair
(z, j) from

    π_k(z, j) ∝ g_k(z, y_k) · f_k(z^{(j)}_{k-1}, z),   j uniform on the ancestors,

so each target evaluation touches one ancestor only. Deterministic flows of
the ancestors are computed lazily and cached per index for the duration of
the step.
"""
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Protocol, Tuple
import numpy as np
import logging

from app.config import settings
from app.models.ocean import DrifterSet
from app.models.request import RwmConfig
from app.models.response import ChainDiagnostics
from app.models.state import ObsVector, PredictedLocations, SampleSet, TimeGrid
from app.services.sine_noise import SineModeCovariance
from app.services.state_space import (
    Covariance,
    DiagonalCovariance,
    FlowBlowUpError,
    ObservationModel,
    TransitionModel,
)
from app.utils.cache import FlowCache
from app.utils.helpers import NonFiniteError, batch_means_se, lag1_autocorrelation
from app.utils.metrics import metrics
from app.utils.timing import Stopwatch, timed

logger = logging.getLogger(__name__)


class Target(Protocol):
    n_ancestors: int

    def log_density(self, z: np.ndarray, j: int) -> float:
        ...


class AuxiliaryTarget:
    """log g(z, y) + log f(Φ(z^{(j)}), z) with the ancestor flows held in a FlowCache"""

    def __init__(
        self,
        flows: FlowCache,
        noise: Covariance,
        log_likelihood: Callable[[np.ndarray], float],
        n_ancestors: int,
        k: int,
    ):
        self.flows = flows
        self.noise = noise
        self.log_likelihood = log_likelihood
        self.n_ancestors = n_ancestors
        self.k = k

    def log_density(self, z: np.ndarray, j: int) -> float:
        lg = self.log_likelihood(z)
        if not np.isfinite(lg):
            raise NonFiniteError("log-likelihood", self.k)
        return lg + self.noise.logpdf(z - self.flows.flow(j))


@dataclass
class ChainState:
    z: np.ndarray
    j: int
    # log π_old as maintained by the kernel; for the "printed" index
    # proposal it carries the log q factor of the last accepted move
    log_target: float


@dataclass(frozen=True)
class KernelOutcome:
    accepted: bool
    index_proposed: bool
    index_moved: bool


def propose_index(j: int, n: int, q: float, rng: np.random.Generator) -> int:
    """±1 random walk on {0..n-1}: stay w.p. 1-2q inside, forced inward at the ends"""
    u = rng.random()
    if n == 1:
        return j
    if j == 0:
        return 1
    if j == n - 1:
        return n - 2
    if u < q:
        return j - 1
    if u < 2.0 * q:
        return j + 1
    return j


def index_log_proposal(j_from: int, j_to: int, n: int, q: float) -> float:
    """log Q(j_from -> j_to) of propose_index (only valid for reachable j_to)"""
    if n == 1 or j_from in (0, n - 1):
        return 0.0
    return float(np.log(q)) if j_to != j_from else float(np.log1p(-2.0 * q))


def rwm_aux_kernel_step(
    state: ChainState,
    target: Target,
    cfg: RwmConfig,
    proposal: Covariance,
    rng: np.random.Generator,
) -> Tuple[ChainState, KernelOutcome]:
    """
    One Metropolis-Hastings step on (z, j)

    z' = z + W', W' ~ proposal; j' from propose_index; accept with
    α = exp(min(0, log π_new - log π_old)). With index_proposal="hastings"
    the index proposal ratio enters log π_new - log π_old in full; with
    "printed" π_new is multiplied by q when the current index sits on a
    boundary, and the stored π_old keeps that factor after acceptance.
    """
    n = target.n_ancestors
    z_new = state.z + proposal.sample(rng)
    j_new = propose_index(state.j, n, cfg.q, rng)
    log_pi = target.log_density(z_new, j_new)

    if cfg.index_proposal == "hastings":
        stored = log_pi
        log_ratio = (log_pi + index_log_proposal(j_new, state.j, n, cfg.q)) - (
            state.log_target + index_log_proposal(state.j, j_new, n, cfg.q)
        )
    else:
        stored = log_pi + (np.log(cfg.q) if n > 1 and state.j in (0, n - 1) else 0.0)
        log_ratio = stored - state.log_target

    if np.isnan(log_ratio):
        raise NonFiniteError("acceptance ratio")
    alpha = np.exp(min(0.0, log_ratio))
    accepted = bool(rng.random() < alpha)
    outcome = KernelOutcome(accepted=accepted, index_proposed=j_new != state.j, index_moved=accepted and j_new != state.j)
    if accepted:
        return ChainState(z=z_new, j=j_new, log_target=stored), outcome
    return state, outcome


@dataclass
class ChainRecord:
    samples: np.ndarray
    diagnostics: ChainDiagnostics


def proposal_sigma(proposal: Covariance) -> float:
    if isinstance(proposal, SineModeCovariance):
        return float(proposal.spec.sigma)
    return proposal.scale


def _diag_columns(d: int, count: int) -> np.ndarray:
    return np.unique(np.linspace(0, d - 1, min(count, d)).astype(int))


def run_chain(
    target: AuxiliaryTarget,
    noise: Covariance,
    cfg: RwmConfig,
    proposal: Covariance,
    rng: np.random.Generator,
) -> ChainRecord:
    """Initialise from a uniform ancestor plus one noise draw, run N_burn + N steps, keep the last N"""
    k = target.k
    j = int(rng.integers(target.n_ancestors))
    z = target.flows.flow(j) + noise.sample(rng)
    state = ChainState(z=z, j=j, log_target=target.log_density(z, j))

    total = cfg.N + cfg.N_burn
    samples = np.empty((cfg.N, z.size))
    visited = {j}
    accepted = index_proposals = index_moves = 0
    for i in range(total):
        state, outcome = rwm_aux_kernel_step(state, target, cfg, proposal, rng)
        accepted += outcome.accepted
        index_proposals += outcome.index_proposed
        index_moves += outcome.index_moved
        visited.add(state.j)
        if i >= cfg.N_burn:
            samples[i - cfg.N_burn] = state.z

    rate = accepted / total
    if accepted == 0:
        logger.warning(f"k={k}: all {total} proposals rejected")
    metrics.record_filter_step(total, accepted, index_moves)
    cols = _diag_columns(samples.shape[1], cfg.diag_coords)
    diag = ChainDiagnostics(
        k=k,
        acceptance_rate=rate,
        lag1_autocorrelation=float(np.mean(lag1_autocorrelation(samples[:, cols]))),
        mean_se=float(np.mean(batch_means_se(samples[:, cols]))),
        unique_ancestors=len(visited),
        flow_evaluations=target.flows.evaluations,
        index_proposals=index_proposals,
        index_moves=index_moves,
        zero_acceptance=accepted == 0,
        sigma_prime=proposal_sigma(proposal),
    )
    return ChainRecord(samples=samples, diagnostics=diag)


def _flow_cache(prev: SampleSet, model: TransitionModel, k: int) -> FlowCache:
    def load(j: int) -> np.ndarray:
        try:
            out = model.flow(prev.samples[j], k)
        except NonFiniteError as e:
            raise FlowBlowUpError(k, str(e)) from e
        if not np.all(np.isfinite(out)):
            raise FlowBlowUpError(k, f"ancestor {j}")
        return out

    return FlowCache(load)


def smcmc_filter_step_known(
    prev: SampleSet,
    model: TransitionModel,
    obs: ObservationModel,
    y: ObsVector,
    cfg: RwmConfig,
    rng: np.random.Generator,
    proposal: Optional[Covariance] = None,
) -> Tuple[SampleSet, ChainDiagnostics]:
    """Samples of π_k from the ancestors `prev` at t_{k-1} and the data y_k"""
    k = y.k
    proposal = proposal or default_proposal(model, obs, cfg)
    flows = _flow_cache(prev, model, k)
    target = AuxiliaryTarget(flows, model.noise, lambda z: obs.log_likelihood(z, y.values, k), prev.N, k)
    record = run_chain(target, model.noise, cfg, proposal, rng)
    return SampleSet(samples=record.samples, k=k), record.diagnostics


def predict_locations(
    prev: SampleSet,
    xbar_prev: PredictedLocations,
    model: TransitionModel,
    k: int,
    rng: np.random.Generator,
    flows: Optional[FlowCache] = None,
    n_paths: Optional[int] = None,
) -> PredictedLocations:
    """
    x̄_{t_k}: average over ancestors of the Euler drifter paths started at x̄_{t_{k-1}}

    Each ancestor's deterministic flow is computed once here and stored in
    `flows` for the chain that follows.
    """
    n = prev.N
    if n_paths is None or n_paths >= n:
        paths = np.arange(n)
    else:
        paths = np.sort(rng.choice(n, size=n_paths, replace=False))
    start = DrifterSet(positions=xbar_prev.positions, ids=xbar_prev.ids, t=0.0)
    positions = []
    for r in paths:
        try:
            flow, moved = model.flow_with_drifters(prev.samples[r], k, start)
        except NonFiniteError as e:
            raise FlowBlowUpError(k, str(e)) from e
        if flows is not None:
            flows.put(int(r), flow)
        positions.append(moved.positions)
    return PredictedLocations(positions=np.mean(positions, axis=0), k=k, ids=start.ids)


def smcmc_filter_step_unknown(
    prev: SampleSet,
    xbar_prev: PredictedLocations,
    model: TransitionModel,
    obs: ObservationModel,
    y: ObsVector,
    cfg: RwmConfig,
    rng: np.random.Generator,
    proposal: Optional[Covariance] = None,
) -> Tuple[SampleSet, PredictedLocations, ChainDiagnostics]:
    """Predict x̄_{t_k}, then sample the chain with the likelihood evaluated at x̄_{t_k}"""
    k = y.k
    proposal = proposal or default_proposal(model, obs, cfg)
    flows = _flow_cache(prev, model, k)
    xbar = predict_locations(prev, xbar_prev, model, k, rng, flows=flows, n_paths=cfg.location_paths)
    target = AuxiliaryTarget(
        flows, model.noise, lambda z: obs.log_likelihood(z, y.values, k, locations=xbar), prev.N, k
    )
    record = run_chain(target, model.noise, cfg, proposal, rng)
    return SampleSet(samples=record.samples, k=k), xbar, record.diagnostics


def estimate(samples: SampleSet, phi: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Plain average of φ over the retained samples"""
    values = np.asarray([phi(z) for z in samples.samples], dtype=float)
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("test function values", samples.k)
    out = values.mean(axis=0)
    return float(out) if np.ndim(out) == 0 else out


def default_proposal(model: TransitionModel, obs: ObservationModel, cfg: RwmConfig) -> Covariance:
    """
    σ′ given: isotropic σ′²I, or sine-mode noise of scale σ′ for the sine-forced model.
    σ′ unset: the process noise shrunk to 2.38/sqrt(d_eff) of the one-step posterior scale.
    """
    noise = model.noise
    if cfg.sigma_prime is not None:
        if isinstance(noise, SineModeCovariance):
            return SineModeCovariance(noise.spec.with_sigma(cfg.sigma_prime))
        return DiagonalCovariance(cfg.sigma_prime ** 2, model.dim)
    if isinstance(noise, SineModeCovariance):
        d_eff = max(3 * noise.spec.n_active ** 2, 1)
    else:
        d_eff = model.dim
    sigma_y = float(np.mean(obs.noise_std())) if obs.d_y else np.inf
    shrink = 1.0 / np.sqrt(1.0 + (noise.scale / sigma_y) ** 2)
    return noise.scaled(2.38 / np.sqrt(d_eff) * shrink)


def tune_proposal_scale(
    prev: SampleSet,
    model: TransitionModel,
    obs: ObservationModel,
    y: ObsVector,
    cfg: RwmConfig,
    rng: np.random.Generator,
    proposal: Covariance,
    xbar_prev: Optional[PredictedLocations] = None,
) -> Covariance:
    """
    Pilot chains on step k rescaling the proposal until acceptance lies in cfg.tune_target

    Returns the last proposal when the pilot budget runs out.
    """
    lo, hi = cfg.tune_target
    mid = 0.5 * (lo + hi)
    pilot = cfg.model_copy(update={"N": cfg.tune_steps, "N_burn": 0})
    for round_ in range(cfg.tune_rounds):
        if xbar_prev is None:
            _, diag = smcmc_filter_step_known(prev, model, obs, y, pilot, rng, proposal)
        else:
            _, _, diag = smcmc_filter_step_unknown(prev, xbar_prev, model, obs, y, pilot, rng, proposal)
        acc = diag.acceptance_rate
        logger.info(f"Tuning round {round_ + 1}: sigma'={proposal_sigma(proposal):.4g}, acceptance={acc:.3f}")
        if lo <= acc <= hi:
            break
        proposal = proposal.scaled(float(np.clip(np.exp(3.0 * (acc - mid)), 0.25, 4.0)))
    return proposal


@dataclass
class FilterResult:
    means: np.ndarray
    stds: np.ndarray
    diagnostics: List[ChainDiagnostics] = field(default_factory=list)
    locations: List[PredictedLocations] = field(default_factory=list)
    wall_ms: List[float] = field(default_factory=list)

    @property
    def n_obs(self) -> int:
        return self.means.shape[0]

    def mean_acceptance(self) -> float:
        if not self.diagnostics:
            return 0.0
        return float(np.mean([d.acceptance_rate for d in self.diagnostics]))


StepCallback = Callable[[int, SampleSet, ChainDiagnostics, Optional[PredictedLocations]], None]


@timed("run_filter")
def run_filter(
    model: TransitionModel,
    obs: ObservationModel,
    grid: TimeGrid,
    cfg: RwmConfig,
    observations: List[ObsVector],
    rng: np.random.Generator,
    z0: np.ndarray,
    mode: str = "known",
    drifters0: Optional[DrifterSet] = None,
    proposal: Optional[Covariance] = None,
    on_step: Optional[StepCallback] = None,
) -> FilterResult:
    """
    Filter means, marginal stds and chain diagnostics at t_1..t_n

    mode="unknown" needs the initial drifter positions `drifters0` and a
    model providing flow_with_drifters.
    """
    if mode not in ("known", "unknown"):
        raise ValueError(f"Unknown filter mode: {mode}")
    if mode == "unknown" and drifters0 is None:
        raise ValueError("unknown-location filtering needs the initial drifter positions")
    if len(observations) > grid.n_obs:
        raise ValueError(f"{len(observations)} observations for a grid with {grid.n_obs} times")

    d = np.asarray(z0).size
    prev = SampleSet.point_mass(z0)
    xbar = (
        PredictedLocations(positions=drifters0.positions, k=0, ids=drifters0.ids) if mode == "unknown" else None
    )
    proposal = proposal or default_proposal(model, obs, cfg)
    result = FilterResult(means=np.zeros((0, d)), stds=np.zeros((0, d)))
    means, stds = [], []

    for y in observations:
        if cfg.tune and y.k == 1:
            proposal = tune_proposal_scale(prev, model, obs, y, cfg, rng, proposal, xbar_prev=xbar)
        with Stopwatch() as sw:
            if mode == "known":
                prev, diag = smcmc_filter_step_known(prev, model, obs, y, cfg, rng, proposal)
            else:
                prev, xbar, diag = smcmc_filter_step_unknown(prev, xbar, model, obs, y, cfg, rng, proposal)
                result.locations.append(xbar)
        means.append(prev.mean())
        stds.append(prev.std())
        result.diagnostics.append(diag)
        result.wall_ms.append(1000.0 * sw.seconds)
        if on_step is not None:
            on_step(y.k, prev, diag, xbar)
        if y.k % settings.log_every == 0 or y.k == len(observations):
            logger.info(
                f"k={y.k}: acceptance={diag.acceptance_rate:.3f}, unique ancestors={diag.unique_ancestors}, "
                f"flows={diag.flow_evaluations}, {sw.seconds * 1000:.0f}ms"
            )

    if means:
        result.means = np.stack(means)
        result.stds = np.stack(stds)
    return result
