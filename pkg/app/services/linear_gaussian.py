"""
Linear-Gaussian benchmark model, exact Kalman filter and ensemble baselines.

Ensembles are (N_e, d) arrays with members as rows. Every analysis solves
its linear systems through Cholesky or symmetric eigen-decompositions; no
explicit matrix inverse is formed.
"""
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Union
import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh, LinAlgError
from scipy.spatial.distance import cdist
from joblib import Parallel, delayed
import logging

from app.models.request import LinearModelConfig, LocalizationSpec
from app.models.state import Ensemble, GaussianBelief, ObsVector
from app.services.state_space import (
    DenseCovariance,
    DiagonalCovariance,
    LinearGaussianObservation,
    LinearGaussianTransition,
)
from app.utils.helpers import frozen, symmetrize
from app.utils.timing import timed

logger = logging.getLogger(__name__)

EnsembleMethod = Literal["enkf", "etkf", "estkf", "lenkf"]


class InnovationCovarianceError(ValueError):
    def __init__(self, k: Optional[int], detail: str = ""):
        self.k = k
        where = f" at k={k}" if k is not None else ""
        super().__init__(f"Innovation covariance is not positive definite{where}" + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class LinearModel:
    """A = diag(a) (or dense), C selects `obs_index`, exact L-step transition"""
    A: np.ndarray
    obs_index: np.ndarray
    sigma_z: float
    sigma_y: float
    z0: np.ndarray
    L: int = 1
    r_hat: int = 1
    grid_side: Optional[int] = None

    def __post_init__(self):
        A = frozen(self.A)
        if A.ndim == 2 and A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        radius = np.max(np.abs(A)) if A.ndim == 1 else np.max(np.abs(np.linalg.eigvals(A)))
        if radius > 1.0 + 1e-12:
            raise ValueError(f"spectral radius of A must be <= 1, got {radius:.4f}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "obs_index", np.asarray(self.obs_index, dtype=int))
        object.__setattr__(self, "z0", frozen(self.z0))

    @classmethod
    def from_config(cls, cfg: LinearModelConfig, rng: np.random.Generator) -> "LinearModel":
        d = cfg.d
        z0 = np.zeros(d)
        active = int(np.floor(cfg.z0_fraction * d))
        z0[:active] = -cfg.z0_scale * rng.uniform(0.0, 1.0, size=active)
        return cls(
            A=np.full(d, cfg.a),
            obs_index=observed_coordinates(d, cfg.r_hat),
            sigma_z=cfg.sigma_z,
            sigma_y=cfg.sigma_y,
            z0=z0,
            L=cfg.L,
            r_hat=cfg.r_hat,
            grid_side=cfg.grid_side,
        )

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def d_y(self) -> int:
        return self.obs_index.size

    @property
    def diagonal(self) -> bool:
        return self.A.ndim == 1

    @property
    def C(self) -> np.ndarray:
        return self.observation().C

    def transition(self) -> LinearGaussianTransition:
        return LinearGaussianTransition(self.A, self.sigma_z, self.L)

    def observation(self) -> LinearGaussianObservation:
        return LinearGaussianObservation(self.obs_index, self.d, self.sigma_y)

    def unobserved_index(self) -> np.ndarray:
        mask = np.ones(self.d, dtype=bool)
        mask[self.obs_index] = False
        return np.flatnonzero(mask)


def observed_coordinates(d: int, r_hat: int) -> np.ndarray:
    """0-based indices of coordinates r̂, 2r̂, ... (1-based), ⌊d/r̂⌋ of them"""
    return np.arange(r_hat - 1, d, r_hat)[: d // r_hat]


def _as_matrix(observations: Union[np.ndarray, Sequence[ObsVector]], d_y: int) -> np.ndarray:
    if isinstance(observations, np.ndarray):
        Y = observations
    else:
        Y = np.stack([o.values for o in observations]) if len(observations) else np.zeros((0, d_y))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or (Y.shape[0] and Y.shape[1] != d_y):
        raise ValueError(f"observations must have shape (n, {d_y}), got {Y.shape}")
    return Y


@timed("kalman_filter")
def kalman_filter(
    model: LinearModel,
    observations: Union[np.ndarray, Sequence[ObsVector]],
    mean0: Optional[np.ndarray] = None,
    cov0: Optional[np.ndarray] = None,
) -> List[GaussianBelief]:
    """
    Exact filter beliefs at t_1..t_n

    Starts from N(z0, σ_z² I) unless mean0/cov0 are given. For diagonal A
    with a diagonal initial covariance every coordinate evolves independently
    and beliefs carry the variance vector instead of a d×d matrix.
    """
    Y = _as_matrix(observations, model.d_y)
    m = np.array(model.z0 if mean0 is None else mean0, dtype=float)
    cov0 = model.sigma_z ** 2 * np.ones(model.d) if cov0 is None else np.asarray(cov0, dtype=float)
    transition = model.transition()
    idx = model.obs_index
    r = model.sigma_y ** 2
    beliefs: List[GaussianBelief] = []

    if model.diagonal and cov0.ndim == 1:
        a = transition.A_L
        q = transition.noise.variances
        P = cov0.copy()
        for k, y in enumerate(Y, start=1):
            m = a * m
            P = a * a * P + q
            if idx.size:
                s = P[idx] + r
                if np.any(s <= 0):
                    raise InnovationCovarianceError(k)
                gain = P[idx] / s
                m[idx] = m[idx] + gain * (y - m[idx])
                P[idx] = P[idx] - gain * P[idx]
            beliefs.append(GaussianBelief(mean=m.copy(), covariance=P.copy(), k=k))
        return beliefs

    A = transition.transition_matrix()
    Q = transition.covariance_matrix()
    P = np.diag(cov0) if cov0.ndim == 1 else cov0.copy()
    for k, y in enumerate(Y, start=1):
        m = A @ m
        P = A @ P @ A.T + Q
        if idx.size:
            PCt = P[:, idx]
            S = PCt[idx] + r * np.eye(idx.size)
            try:
                factor = cho_factor(S, lower=True)
            except LinAlgError as e:
                raise InnovationCovarianceError(k, str(e)) from e
            Kt = cho_solve(factor, PCt.T)
            m = m + Kt.T @ (y - m[idx])
            P = symmetrize(P - PCt @ Kt)
        beliefs.append(GaussianBelief(mean=m.copy(), covariance=P.copy(), k=k))
    return beliefs


def kalman_means(beliefs: Sequence[GaussianBelief]) -> np.ndarray:
    return np.stack([b.mean for b in beliefs]) if beliefs else np.zeros((0, 0))


def _noise_draws(model: LinearModel, n: int, rng: np.random.Generator) -> np.ndarray:
    noise = model.transition().noise
    if isinstance(noise, DiagonalCovariance):
        return np.sqrt(noise.variances) * rng.standard_normal((n, model.d))
    if isinstance(noise, DenseCovariance):
        return rng.standard_normal((n, model.d)) @ noise.cholesky.T
    raise TypeError(f"Unsupported noise descriptor {type(noise).__name__}")


def initial_ensemble(model: LinearModel, N_e: int, rng: np.random.Generator) -> Ensemble:
    """Members z0 + N(0, σ_z² I)"""
    return Ensemble(members=model.z0 + model.sigma_z * rng.standard_normal((N_e, model.d)))


def forecast_ensemble(ens: Ensemble, model: LinearModel, rng: np.random.Generator) -> Ensemble:
    transition = model.transition()
    X = ens.members * transition.A_L if model.diagonal else ens.members @ transition.A_L.T
    return Ensemble(members=X + _noise_draws(model, ens.N_e, rng), k=ens.k + 1)


def _inflate(X: np.ndarray, inflation: float) -> np.ndarray:
    if inflation == 1.0:
        return X
    m = X.mean(axis=0)
    return m + np.sqrt(inflation) * (X - m)


def _perturbations(rng: np.random.Generator, N_e: int, d_y: int) -> np.ndarray:
    return rng.standard_normal((N_e, d_y))


def _stochastic_gain_solve(Yp: np.ndarray, D: np.ndarray, r: np.ndarray, method: str) -> np.ndarray:
    """G = (Yp^T Yp + diag r)^{-1} D^T, directly or through Woodbury"""
    N_e, d_y = Yp.shape
    if method == "auto":
        method = "woodbury" if d_y > N_e else "direct"
    try:
        if method == "direct":
            S = Yp.T @ Yp + np.diag(r)
            return cho_solve(cho_factor(S, lower=True), D.T)
        if method == "woodbury":
            rinv = 1.0 / r
            YR = Yp * rinv
            inner = np.eye(N_e) + YR @ Yp.T
            correction = cho_solve(cho_factor(inner, lower=True), YR @ D.T)
            return rinv[:, None] * D.T - YR.T @ correction
    except LinAlgError as e:
        raise InnovationCovarianceError(None, str(e)) from e
    raise ValueError(f"Unknown solve method: {method}")


def enkf_step(
    ens: Ensemble,
    model: LinearModel,
    y: np.ndarray,
    rng: np.random.Generator,
    inflation: float = 1.0,
    method: str = "auto",
) -> Ensemble:
    """
    Stochastic EnKF analysis with perturbed observations on a forecast ensemble

    method="auto" switches to the Woodbury form when d_y > N_e.
    """
    X = _inflate(ens.members, inflation)
    N_e = X.shape[0]
    idx = model.obs_index
    HX = X[:, idx]
    Xs = (X - X.mean(axis=0)) / np.sqrt(N_e - 1)
    Yp = (HX - HX.mean(axis=0)) / np.sqrt(N_e - 1)
    r = np.full(idx.size, model.sigma_y ** 2)
    D = np.asarray(y) + model.sigma_y * _perturbations(rng, N_e, idx.size) - HX
    G = _stochastic_gain_solve(Yp, D, r, method)
    return Ensemble(members=X + (Yp @ G).T @ Xs, k=ens.k)


def _sym_eig(M: np.ndarray, what: str):
    evals, V = eigh(symmetrize(M))
    if evals.min() <= 0:
        raise InnovationCovarianceError(None, f"{what} has eigenvalue {evals.min():.3g}")
    return evals, V


def etkf_step(ens: Ensemble, model: LinearModel, y: np.ndarray, inflation: float = 1.0) -> Ensemble:
    """Ensemble transform Kalman filter analysis, symmetric square root"""
    X = _inflate(ens.members, inflation)
    N_e = X.shape[0]
    m = X.mean(axis=0)
    Xp = X - m
    HX = X[:, model.obs_index]
    ybar = HX.mean(axis=0)
    Yb = HX - ybar
    C = Yb / model.sigma_y ** 2
    evals, V = _sym_eig((N_e - 1) * np.eye(N_e) + C @ Yb.T, "ETKF transform matrix")
    wbar = V @ ((V.T @ (C @ (np.asarray(y) - ybar))) / evals)
    Wa = (V * np.sqrt((N_e - 1) / evals)) @ V.T
    return Ensemble(members=m + (wbar[None, :] + Wa.T) @ Xp, k=ens.k)


def estkf_projection(N_e: int) -> np.ndarray:
    """(N_e, N_e-1) error-subspace projection with zero column sums"""
    c = 1.0 / (N_e * (1.0 / np.sqrt(N_e) + 1.0))
    T = np.full((N_e, N_e - 1), -c)
    T[np.arange(N_e - 1), np.arange(N_e - 1)] += 1.0
    T[N_e - 1, :] = -1.0 / np.sqrt(N_e)
    return T


def estkf_step(ens: Ensemble, model: LinearModel, y: np.ndarray, inflation: float = 1.0) -> Ensemble:
    """Error-subspace transform Kalman filter analysis"""
    X = _inflate(ens.members, inflation)
    N_e = X.shape[0]
    m = X.mean(axis=0)
    T = estkf_projection(N_e)
    Lm = T.T @ X
    HL = T.T @ X[:, model.obs_index]
    HLR = HL / model.sigma_y ** 2
    evals, V = _sym_eig((N_e - 1) * np.eye(N_e - 1) + HLR @ HL.T, "ESTKF transform matrix")
    innovation = np.asarray(y) - m[model.obs_index]
    w = V @ ((V.T @ (HLR @ innovation)) / evals)
    W = np.sqrt(N_e - 1) * ((V / np.sqrt(evals)) @ V.T) @ T.T
    return Ensemble(members=m + (w[:, None] + W).T @ Lm, k=ens.k)


def taper_weights(distance: np.ndarray, radius: float, taper: str) -> np.ndarray:
    """Observation weights in [0, 1]; 0 beyond the localization radius"""
    distance = np.asarray(distance, dtype=float)
    inside = distance <= radius
    if taper == "none":
        return inside.astype(float)
    half_width = radius / 2.0
    z = np.zeros_like(distance) if np.isinf(half_width) else distance / half_width
    if taper == "exponential":
        return np.where(inside, np.exp(-z), 0.0)
    if taper == "gaspari_cohn":
        return np.where(inside, gaspari_cohn(z), 0.0)
    raise ValueError(f"Unknown taper: {taper}")


def gaspari_cohn(z: np.ndarray) -> np.ndarray:
    """Fifth-order piecewise rational correlation, support |z| <= 2"""
    z = np.abs(np.asarray(z, dtype=float))
    out = np.zeros_like(z)
    near = z <= 1.0
    far = (z > 1.0) & (z < 2.0)
    zn = z[near]
    out[near] = -0.25 * zn ** 5 + 0.5 * zn ** 4 + 0.625 * zn ** 3 - 5.0 / 3.0 * zn ** 2 + 1.0
    zf = z[far]
    out[far] = (
        zf ** 5 / 12.0 - 0.5 * zf ** 4 + 0.625 * zf ** 3 + 5.0 / 3.0 * zf ** 2 - 5.0 * zf + 4.0 - 2.0 / (3.0 * zf)
    )
    return np.clip(out, 0.0, 1.0)


def grid_coordinates(d: int, grid_side: Optional[int]) -> np.ndarray:
    """Row-major (row, col) of each state index; a 1-d chain without grid_side"""
    i = np.arange(d)
    if grid_side is None:
        return np.column_stack([i, np.zeros(d)]).astype(float)
    return np.column_stack([i // grid_side, i % grid_side]).astype(float)


def _local_analysis(X, Xs, Yp, HX, y, pert, sigma_y, block, distance, loc: LocalizationSpec):
    w = taper_weights(distance, loc.radius, loc.taper)
    keep = w > 0
    if not np.any(keep):
        return block, X[:, block]
    wk = w[keep]
    r = sigma_y ** 2 / wk
    D = y[keep] + pert[:, keep] * (sigma_y / np.sqrt(wk)) - HX[:, keep]
    G = _stochastic_gain_solve(Yp[:, keep], D, r, "direct")
    return block, X[:, block] + (Yp[:, keep] @ G).T @ Xs[:, block]


def lenkf_step(
    ens: Ensemble,
    model: LinearModel,
    y: np.ndarray,
    loc: LocalizationSpec,
    rng: np.random.Generator,
    inflation: float = 1.0,
    n_jobs: int = 1,
) -> Ensemble:
    """
    Local EnKF with domain partition and R-localization

    Each of the Γ subdomains is updated from the observations within
    `loc.radius` of it, with σ_y² divided by the taper weight of the
    observation's distance to the subdomain. Perturbations are drawn once
    for all subdomains.
    """
    d = model.d
    loc.validate_for(d)
    X = _inflate(ens.members, inflation)
    N_e = X.shape[0]
    idx = model.obs_index
    HX = X[:, idx]
    Xs = (X - X.mean(axis=0)) / np.sqrt(N_e - 1)
    Yp = (HX - HX.mean(axis=0)) / np.sqrt(N_e - 1)
    pert = _perturbations(rng, N_e, idx.size)
    y = np.asarray(y, dtype=float)

    coords = grid_coordinates(d, loc.grid_side if loc.grid_side is not None else model.grid_side)
    blocks = np.arange(d).reshape(loc.n_subdomains, d // loc.n_subdomains)
    distances = [cdist(coords[b], coords[idx]).min(axis=0) for b in blocks]
    results = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_local_analysis)(X, Xs, Yp, HX, y, pert, model.sigma_y, b, dist, loc)
        for b, dist in zip(blocks, distances)
    )
    Xa = np.empty_like(X)
    for block, values in results:
        Xa[:, block] = values
    return Ensemble(members=Xa, k=ens.k)


@timed("ensemble_filter")
def run_ensemble_filter(
    method: EnsembleMethod,
    model: LinearModel,
    observations: Union[np.ndarray, Sequence[ObsVector]],
    N_e: int,
    rng: np.random.Generator,
    inflation: float = 1.0,
    loc: Optional[LocalizationSpec] = None,
    n_jobs: int = 1,
) -> np.ndarray:
    """Analysis ensemble means at t_1..t_n, shape (n, d)"""
    Y = _as_matrix(observations, model.d_y)
    if method == "lenkf" and loc is None:
        raise ValueError("lenkf needs a LocalizationSpec")
    ens = initial_ensemble(model, N_e, rng)
    means = np.zeros((Y.shape[0], model.d))
    for k, y in enumerate(Y):
        ens = forecast_ensemble(ens, model, rng)
        if model.d_y:
            if method == "enkf":
                ens = enkf_step(ens, model, y, rng, inflation)
            elif method == "etkf":
                ens = etkf_step(ens, model, y, inflation)
            elif method == "estkf":
                ens = estkf_step(ens, model, y, inflation)
            elif method == "lenkf":
                ens = lenkf_step(ens, model, y, loc, rng, inflation, n_jobs)
            else:
                raise ValueError(f"Unknown ensemble method: {method}")
        means[k] = ens.mean()
    logger.debug(f"{method}: {Y.shape[0]} steps with N_e={N_e}, d={model.d}")
    return means


def accuracy_metric(
    filter_means: np.ndarray,
    kf_means: np.ndarray,
    sigma_y: float,
    threshold_fraction: float = 0.5,
) -> float:
    """Fraction of |filter - reference| <= threshold_fraction·σ_y over all times and coordinates"""
    a = np.asarray(filter_means, dtype=float)
    b = np.asarray(kf_means, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"series shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("accuracy of an empty series is undefined")
    return float(np.mean(np.abs(a - b) <= threshold_fraction * sigma_y))
