"""
Numeric containers shared by the filters.

These are frozen dataclasses around read-only numpy arrays: once built they
are safe to hand to parallel workers.
"""
from dataclasses import dataclass, field
from typing import Literal, Optional
import numpy as np

from app.utils.helpers import frozen, require_finite

Layout = Literal["generic", "sw"]


@dataclass(frozen=True)
class TimeGrid:
    """Observation times t_0 = 0 < t_1 < ... < t_n, with L inner steps per interval"""
    times: np.ndarray
    L: int = 1

    def __post_init__(self):
        times = frozen(np.atleast_1d(self.times))
        if self.L < 1:
            raise ValueError(f"L must be >= 1, got {self.L}")
        if times.ndim != 1 or times.size < 1:
            raise ValueError("times must be a non-empty 1-d array")
        if times[0] != 0.0:
            raise ValueError(f"t_0 must be 0, got {times[0]}")
        if np.any(np.diff(times) <= 0):
            raise ValueError("observation times must be strictly increasing")
        object.__setattr__(self, "times", times)

    @classmethod
    def uniform(cls, n_obs: int, L: int = 1, tau: float = 1.0) -> "TimeGrid":
        """n_obs intervals of L inner steps of size tau"""
        if n_obs < 0:
            raise ValueError(f"n_obs must be >= 0, got {n_obs}")
        if tau <= 0:
            raise ValueError(f"tau must be > 0, got {tau}")
        return cls(times=np.arange(n_obs + 1) * (L * tau), L=L)

    @property
    def n_obs(self) -> int:
        return self.times.size - 1

    def tau(self, k: int) -> float:
        """Inner step size of the interval (t_{k-1}, t_k]"""
        if not 1 <= k <= self.n_obs:
            raise IndexError(f"interval {k} outside 1..{self.n_obs}")
        return float(self.times[k] - self.times[k - 1]) / self.L

    def inner_times(self, k: int) -> np.ndarray:
        """t_{k-1} + l*tau_k for l = 0..L"""
        return self.times[k - 1] + self.tau(k) * np.arange(self.L + 1)


@dataclass(frozen=True)
class StateVector:
    values: np.ndarray
    layout: Layout = "generic"

    def __post_init__(self):
        values = frozen(require_finite(np.ravel(self.values), "state vector"))
        if values.size == 0:
            raise ValueError("state vector must have d > 0")
        if self.layout == "sw" and values.size % 3:
            raise ValueError(f"sw layout needs d divisible by 3, got {values.size}")
        object.__setattr__(self, "values", values)

    @property
    def d(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class ObsVector:
    values: np.ndarray
    k: int

    def __post_init__(self):
        object.__setattr__(self, "values", frozen(require_finite(np.ravel(self.values), "observation", self.k)))

    @property
    def d_y(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class SampleSet:
    """N retained chain states approximating the filter at t_k"""
    samples: np.ndarray
    k: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.shape[0] < 1:
            raise ValueError("a sample set needs N >= 1")
        require_finite(samples, "samples", self.k)
        samples = samples.copy()
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @classmethod
    def point_mass(cls, z0: np.ndarray) -> "SampleSet":
        """The known initial condition as a one-sample set at k = 0"""
        return cls(samples=np.asarray(z0, dtype=float)[None, :], k=0)

    @property
    def N(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    def std(self) -> np.ndarray:
        return self.samples.std(axis=0)


@dataclass(frozen=True)
class PredictedLocations:
    """Monte Carlo predicted drifter positions x̄_{t_k}, shape (N_d, 2)"""
    positions: np.ndarray
    k: int
    ids: Optional[np.ndarray] = None

    def __post_init__(self):
        positions = frozen(require_finite(np.atleast_2d(self.positions), "predicted locations", self.k))
        if positions.shape[1] != 2:
            raise ValueError(f"positions must have shape (N_d, 2), got {positions.shape}")
        ids = np.arange(positions.shape[0]) if self.ids is None else np.asarray(self.ids)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "ids", ids)


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    covariance: np.ndarray
    k: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mean", frozen(self.mean))
        object.__setattr__(self, "covariance", frozen(self.covariance))

    @property
    def diagonal(self) -> bool:
        """Covariance stored as its diagonal (independent coordinates)"""
        return self.covariance.ndim == 1

    def cov_matrix(self) -> np.ndarray:
        return np.diag(self.covariance) if self.diagonal else np.array(self.covariance)


@dataclass(frozen=True)
class Ensemble:
    """N_e members stored as rows of an (N_e, d) array"""
    members: np.ndarray
    k: int = 0
    label: str = field(default="", compare=False)

    def __post_init__(self):
        members = frozen(np.atleast_2d(self.members))
        if members.shape[0] < 2:
            raise ValueError(f"an ensemble needs N_e >= 2, got {members.shape[0]}")
        object.__setattr__(self, "members", members)

    @property
    def N_e(self) -> int:
        return self.members.shape[0]

    def mean(self) -> np.ndarray:
        return self.members.mean(axis=0)

    def anomalies(self) -> np.ndarray:
        return self.members - self.mean()
