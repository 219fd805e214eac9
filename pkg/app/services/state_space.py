"""
State-space model contracts consumed by every filter.

Log-densities drop their normalising constants: a Gaussian log-density is
returned as -1/2 times the quadratic form, so its maximum is 0. All filters
only compare differences of these values.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple, Union
import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
import logging

from app.models.state import ObsVector, StateVector, TimeGrid
from app.utils.helpers import NonFiniteError, frozen, require_finite

logger = logging.getLogger(__name__)


class CovarianceError(ValueError):
    """Covariance descriptor is singular, indefinite or malformed"""


class FlowBlowUpError(RuntimeError):
    """The forward model produced non-finite values"""

    def __init__(self, k: int, detail: str = ""):
        self.k = k
        super().__init__(f"Flow produced non-finite state at k={k}" + (f": {detail}" if detail else ""))


class Covariance(ABC):
    """Process-noise / proposal covariance with its sampler and log-density"""

    dim: int

    @abstractmethod
    def sample(self, rng: np.random.Generator) -> np.ndarray:
        ...

    @abstractmethod
    def logpdf(self, residual: np.ndarray) -> float:
        """log N(residual; 0, Q) with the constant dropped"""

    @property
    @abstractmethod
    def scale(self) -> float:
        """Typical per-coordinate standard deviation"""

    def scaled(self, factor: float) -> "Covariance":
        raise NotImplementedError(f"{type(self).__name__} cannot be rescaled")


class DiagonalCovariance(Covariance):
    """Q = diag(variances); a scalar variance means σ²I"""

    def __init__(self, variances: Union[float, np.ndarray], dim: int, allow_degenerate: bool = False):
        var = np.asarray(variances, dtype=float)
        if var.ndim == 0:
            var = np.full(dim, float(var))
        if var.shape != (dim,):
            raise CovarianceError(f"expected {dim} variances, got shape {var.shape}")
        if not np.all(np.isfinite(var)):
            raise CovarianceError("variances must be finite")
        if np.any(var < 0) or (not allow_degenerate and np.any(var == 0)):
            raise CovarianceError("diagonal covariance must be positive definite")
        self.dim = dim
        self.variances = frozen(var)
        self.degenerate = bool(np.any(var == 0))
        self._std = np.sqrt(var)
        self._precision = np.where(var > 0, 1.0 / np.where(var > 0, var, 1.0), np.inf)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self._std * rng.standard_normal(self.dim)

    def logpdf(self, residual: np.ndarray) -> float:
        if self.degenerate:
            raise CovarianceError("log-density of a degenerate covariance is undefined")
        return -0.5 * float(np.dot(residual * residual, self._precision))

    @property
    def scale(self) -> float:
        return float(np.sqrt(np.mean(self.variances)))

    def scaled(self, factor: float) -> "DiagonalCovariance":
        return DiagonalCovariance(self.variances * factor ** 2, self.dim, self.degenerate)


class DenseCovariance(Covariance):
    """Dense Q factorised once with Cholesky"""

    def __init__(self, matrix: np.ndarray):
        mat = np.asarray(matrix, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise CovarianceError(f"covariance must be square, got {mat.shape}")
        if not np.allclose(mat, mat.T, atol=1e-12 * max(1.0, np.abs(mat).max())):
            raise CovarianceError("covariance must be symmetric")
        try:
            self._factor = cho_factor(mat, lower=True)
        except LinAlgError as e:
            raise CovarianceError(f"covariance is not positive definite: {e}") from e
        self.dim = mat.shape[0]
        self.matrix = frozen(mat)
        self._lower = np.tril(self._factor[0])

    @property
    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor of Q"""
        return self._lower

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self._lower @ rng.standard_normal(self.dim)

    def logpdf(self, residual: np.ndarray) -> float:
        return -0.5 * float(residual @ cho_solve(self._factor, residual))

    @property
    def scale(self) -> float:
        return float(np.sqrt(np.mean(np.diag(self.matrix))))

    def scaled(self, factor: float) -> "DenseCovariance":
        return DenseCovariance(self.matrix * factor ** 2)


def gaussian_transition_logdensity(
    prev: np.ndarray,
    next_state: np.ndarray,
    mean_fn: Callable[[np.ndarray], np.ndarray],
    Q: Covariance,
) -> float:
    """log N(next; mean_fn(prev), Q), constant dropped"""
    prev = require_finite(prev, "previous state")
    next_state = require_finite(next_state, "next state")
    return Q.logpdf(next_state - mean_fn(prev))


class TransitionModel(ABC):
    """Z_{t_k} = Φ(Z_{t_{k-1}}, t_{k-1}, t_k) + W_{t_k}, W ~ N(0, Q)"""

    dim: int
    noise: Covariance

    @abstractmethod
    def flow(self, prev: np.ndarray, k: int) -> np.ndarray:
        """Deterministic flow Φ(prev, t_{k-1}, t_k)"""

    def sample(self, prev: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
        return self.flow(prev, k) + self.noise.sample(rng)

    def log_density(self, prev: np.ndarray, next_state: np.ndarray, k: int) -> float:
        return gaussian_transition_logdensity(prev, next_state, lambda z: self.flow(z, k), self.noise)


class ObservationModel(ABC):
    """Y_{t_k} | Z_{t_k} with isotropic Gaussian noise of scale σ_y"""

    d_y: int
    sigma_y: Union[float, np.ndarray]

    @abstractmethod
    def mean(self, state: np.ndarray, k: int, locations=None) -> np.ndarray:
        """Noiseless observation of `state`"""

    def noise_std(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.sigma_y, dtype=float), (self.d_y,))

    def log_likelihood(self, state: np.ndarray, y: np.ndarray, k: int, locations=None) -> float:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.d_y,):
            raise ValueError(f"observation has shape {y.shape}, expected ({self.d_y},)")
        r = (y - self.mean(state, k, locations)) / self.noise_std()
        return -0.5 * float(r @ r)

    def sample(self, state: np.ndarray, k: int, rng: np.random.Generator, locations=None) -> np.ndarray:
        return self.mean(state, k, locations) + self.noise_std() * rng.standard_normal(self.d_y)


class LinearGaussianTransition(TransitionModel):
    """
    L-fold composition of Z <- A Z + σ_z W as a single exact Gaussian step

    A given as a vector is taken as diag(A), which keeps the flow and the
    noise density O(d).
    """

    def __init__(self, A: np.ndarray, sigma_z: float, L: int = 1):
        A = np.asarray(A, dtype=float)
        if L < 1:
            raise ValueError(f"L must be >= 1, got {L}")
        self.L = L
        self.sigma_z = sigma_z
        self.diagonal = A.ndim == 1
        self.dim = A.shape[0]
        if self.diagonal:
            self.A = frozen(A)
            self.A_L = frozen(A ** L)
            var = sigma_z ** 2 * sum(A ** (2 * l) for l in range(L))
            self.noise = DiagonalCovariance(var, self.dim, allow_degenerate=sigma_z == 0)
        else:
            if A.shape != (self.dim, self.dim):
                raise ValueError(f"A must be square, got {A.shape}")
            self.A = frozen(A)
            self.A_L = frozen(np.linalg.matrix_power(A, L))
            powers = [np.linalg.matrix_power(A, l) for l in range(L)]
            Q = sigma_z ** 2 * sum(P @ P.T for P in powers)
            if sigma_z == 0:
                self.noise = DiagonalCovariance(0.0, self.dim, allow_degenerate=True)
            else:
                self.noise = DenseCovariance(Q)

    def flow(self, prev: np.ndarray, k: int) -> np.ndarray:
        return self.A_L * prev if self.diagonal else self.A_L @ prev

    def covariance_matrix(self) -> np.ndarray:
        if isinstance(self.noise, DiagonalCovariance):
            return np.diag(self.noise.variances)
        return np.array(self.noise.matrix)

    def transition_matrix(self) -> np.ndarray:
        return np.diag(self.A_L) if self.diagonal else np.array(self.A_L)


class LinearGaussianObservation(ObservationModel):
    """Y = C Z + σ_y V where C picks the coordinates in `obs_index`"""

    def __init__(self, obs_index: np.ndarray, d: int, sigma_y: Union[float, np.ndarray]):
        idx = np.asarray(obs_index, dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= d):
            raise ValueError(f"observed indices must lie in [0, {d})")
        self.obs_index = idx
        self.d = d
        self.d_y = idx.size
        self.sigma_y = sigma_y

    def mean(self, state: np.ndarray, k: int, locations=None) -> np.ndarray:
        return state[self.obs_index]

    @property
    def C(self) -> np.ndarray:
        C = np.zeros((self.d_y, self.d))
        C[np.arange(self.d_y), self.obs_index] = 1.0
        return C


@dataclass(frozen=True)
class Trajectory:
    """Hidden states at t_0..t_n, observations at t_1..t_n and optional drifter tracks"""
    states: np.ndarray
    observations: List[ObsVector]
    tracks: Optional[list] = None

    @property
    def n_obs(self) -> int:
        return len(self.observations)

    def observation_matrix(self) -> np.ndarray:
        if not self.observations:
            return np.zeros((0, 0))
        return np.stack([o.values for o in self.observations])


def simulate_trajectory(
    model: TransitionModel,
    obs: ObservationModel,
    grid: TimeGrid,
    z0: Union[StateVector, np.ndarray],
    rng: np.random.Generator,
    drifters=None,
) -> Trajectory:
    """
    Generate a synthetic truth and its observations

    With `drifters`, the model must provide `flow_with_drifters`; drifters are
    advected along the deterministic inner path and the observation model is
    evaluated at the resulting positions.
    """
    z = require_finite(z0.values if isinstance(z0, StateVector) else z0, "initial state").copy()
    states = [z]
    observations: List[ObsVector] = []
    tracks = [drifters] if drifters is not None else None
    for k in range(1, grid.n_obs + 1):
        try:
            if drifters is not None:
                mean, drifters = model.flow_with_drifters(z, k, drifters)
                tracks.append(drifters)
            else:
                mean = model.flow(z, k)
        except NonFiniteError as e:
            raise FlowBlowUpError(k, str(e)) from e
        z = mean + model.noise.sample(rng)
        if not np.all(np.isfinite(z)):
            raise FlowBlowUpError(k)
        y = obs.sample(z, k, rng, locations=drifters)
        states.append(z)
        observations.append(ObsVector(values=y, k=k))
    logger.debug(f"Simulated {grid.n_obs} observation times, d={z.size}")
    return Trajectory(states=np.stack(states), observations=observations, tracks=tracks)
