"""
Boundary-vanishing stochastic forcing built from sine modes.

Each of the η, u, v fields receives Ξ = S1 ε S2ᵀ where
S1[l, m] = sin(π m l / (N_y - 1)) over rows, S2 likewise over columns, and
ε[m, n] ~ N(0, σ² / (max(m, n) + 1)) independently. The first and last
node of every sine column are exactly zero, so each draw vanishes on the
four domain edges. Mode 0 is identically zero; the active modes are
m, n = 1..J-1.
"""
from dataclasses import dataclass, field
from typing import Optional
import numpy as np
import logging

from app.services.state_space import Covariance, CovarianceError

logger = logging.getLogger(__name__)


def sine_matrix(n_nodes: int, J: int) -> np.ndarray:
    """(n_nodes, J) matrix of sin(π m s / (n_nodes - 1)), zero at both ends"""
    s = np.arange(n_nodes)[:, None]
    m = np.arange(J)[None, :]
    denom = max(n_nodes - 1, 1)
    S = np.sin(np.pi * m * s / denom)
    S[0, :] = 0.0
    S[-1, :] = 0.0
    return S


@dataclass(frozen=True)
class SineNoiseSpec:
    nx: int
    ny: int
    J: int
    sigma: float
    S1: np.ndarray = field(init=False, repr=False)
    S2: np.ndarray = field(init=False, repr=False)
    variances: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.J < 1:
            raise ValueError(f"J must be >= 1, got {self.J}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        S1 = sine_matrix(self.ny, self.J)
        S2 = sine_matrix(self.nx, self.J)
        m = np.arange(self.J)
        variances = self.sigma ** 2 / (np.maximum.outer(m, m) + 1.0)
        for name, value in (("S1", S1), ("S2", S2), ("variances", variances)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        # projections onto the active modes, computed once
        active = self.n_active
        P1 = np.linalg.pinv(S1[:, 1:]) if active else np.zeros((0, self.ny))
        P2 = np.linalg.pinv(S2[:, 1:]) if active else np.zeros((0, self.nx))
        object.__setattr__(self, "_P1", P1)
        object.__setattr__(self, "_P2", P2)

    @property
    def n_active(self) -> int:
        return self.J - 1

    @property
    def full_rank(self) -> bool:
        """Active modes are linearly independent on the grid"""
        return self.n_active <= min(self.nx, self.ny) - 2

    @property
    def dim(self) -> int:
        return 3 * self.nx * self.ny

    def with_sigma(self, sigma: float) -> "SineNoiseSpec":
        return SineNoiseSpec(nx=self.nx, ny=self.ny, J=self.J, sigma=sigma)

    def fields(self, W: np.ndarray) -> np.ndarray:
        W = np.asarray(W, dtype=float)
        if W.shape != (self.dim,):
            raise ValueError(f"noise vector must have length {self.dim}, got {W.shape}")
        return W.reshape((3, self.nx, self.ny)).transpose(0, 2, 1)

    def project(self, W: np.ndarray) -> np.ndarray:
        """Active-mode coefficients ε̂ of each field, shape (3, J-1, J-1)"""
        return self._P1 @ self.fields(W) @ self._P2.T

    def synthesize(self, eps: np.ndarray) -> np.ndarray:
        """(3, J, J) coefficients -> vectorised noise"""
        xi = self.S1 @ eps @ self.S2.T
        return np.concatenate([f.ravel(order="F") for f in xi])


@dataclass(frozen=True)
class NoiseLogDensity:
    value: float
    projected_value: float
    in_support: bool
    residual: float


def sample_sine_noise(spec: SineNoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """W = [vec Ξ^η; vec Ξ^u; vec Ξ^v] with independent coefficients per field"""
    eps = rng.standard_normal((3, spec.J, spec.J)) * np.sqrt(spec.variances)
    return spec.synthesize(eps)


def _mode_quadratic(spec: SineNoiseSpec, coeffs: np.ndarray) -> float:
    if spec.n_active == 0:
        return 0.0
    return -0.5 * float(np.sum(coeffs ** 2 / spec.variances[1:, 1:]))


def sine_noise_logdensity(W: np.ndarray, spec: SineNoiseSpec, tol: float = 1e-8) -> NoiseLogDensity:
    """
    Gaussian log-density of W in sine-mode space (constant dropped)

    W is projected onto the active modes; if the part of W outside their span
    exceeds `tol` relative to |W|, the value is -inf and `in_support` is False.
    `projected_value` always holds the density of the projection.
    """
    if spec.sigma == 0:
        raise CovarianceError("sine-mode noise with sigma=0 has no density")
    fields = spec.fields(W)
    coeffs = spec.project(W)
    recon = spec.S1[:, 1:] @ coeffs @ spec.S2[:, 1:].T if spec.n_active else np.zeros_like(fields)
    norm = float(np.linalg.norm(fields))
    residual = float(np.linalg.norm(fields - recon)) / norm if norm > 0 else 0.0
    projected = _mode_quadratic(spec, coeffs)
    in_support = residual <= tol
    return NoiseLogDensity(
        value=projected if in_support else -np.inf,
        projected_value=projected,
        in_support=in_support,
        residual=residual,
    )


class SineModeCovariance(Covariance):
    """
    Rank-deficient covariance of the sine-mode forcing

    `logpdf` evaluates the projected density, so residuals carrying
    components outside the mode span (e.g. a different ancestor's flow) are
    scored on their in-span part. With strict=True it returns -inf instead.
    """

    def __init__(self, spec: SineNoiseSpec, strict: bool = False):
        self.spec = spec
        self.dim = spec.dim
        self.strict = strict

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return sample_sine_noise(self.spec, rng)

    def logpdf(self, residual: np.ndarray) -> float:
        if self.strict:
            return sine_noise_logdensity(residual, self.spec).value
        if self.spec.sigma == 0:
            raise CovarianceError("sine-mode noise with sigma=0 has no density")
        return _mode_quadratic(self.spec, self.spec.project(residual))

    @property
    def scale(self) -> float:
        col1 = np.sum(self.spec.S1 ** 2, axis=0)
        col2 = np.sum(self.spec.S2 ** 2, axis=0)
        total = float(col1 @ self.spec.variances @ col2)
        return float(np.sqrt(total / (self.spec.nx * self.spec.ny)))

    def scaled(self, factor: float) -> "SineModeCovariance":
        return SineModeCovariance(self.spec.with_sigma(self.spec.sigma * factor), strict=self.strict)
