"""
Grid, state and drifter containers for the rotating shallow-water model.

Field arrays are indexed [row, column] = [y-index j, x-index i] with shape
(N_y, N_x); with the ghost ring the shape is (N_y + 2, N_x + 2). State
vectors stack the η, u, v blocks, each flattened column-major.
"""
from dataclasses import dataclass
from typing import Literal, Optional, Tuple
import numpy as np

from app.utils.helpers import frozen, require_finite

EARTH_RADIUS = 6.371e6
OMEGA = 7.29e-5

FIELDS = ("eta", "u", "v")


@dataclass(frozen=True)
class SwGrid:
    nx: int
    ny: int
    dx: float
    dy: float
    x_lo: float = 0.0
    y_lo: float = 0.0

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid needs at least one cell, got {self.nx}x{self.ny}")
        if self.dx <= 0 or self.dy <= 0:
            raise ValueError(f"cell sizes must be positive, got dx={self.dx}, dy={self.dy}")

    @classmethod
    def from_bounds(cls, nx: int, ny: int, x_lo: float, x_hi: float, y_lo: float, y_hi: float) -> "SwGrid":
        # cell sizes are taken positive whichever way the bounds are given
        x0, x1 = sorted((x_lo, x_hi))
        y0, y1 = sorted((y_lo, y_hi))
        return cls(nx=nx, ny=ny, dx=(x1 - x0) / nx, dy=(y1 - y0) / ny, x_lo=x0, y_lo=y0)

    @property
    def x_hi(self) -> float:
        return self.x_lo + self.nx * self.dx

    @property
    def y_hi(self) -> float:
        return self.y_lo + self.ny * self.dy

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def ghost_shape(self) -> Tuple[int, int]:
        return (self.ny + 2, self.nx + 2)

    @property
    def cells(self) -> int:
        return self.nx * self.ny

    @property
    def d(self) -> int:
        return 3 * self.cells

    @property
    def x_nodes(self) -> np.ndarray:
        return self.x_lo + self.dx * np.arange(self.nx)

    @property
    def y_nodes(self) -> np.ndarray:
        return self.y_lo + self.dy * np.arange(self.ny)

    def clamp(self, positions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Clamp (N, 2) positions to the closed domain; returns (clamped, moved mask)"""
        lo = np.array([self.x_lo, self.y_lo])
        hi = np.array([self.x_hi, self.y_hi])
        clamped = np.clip(positions, lo, hi)
        moved = np.any(clamped != positions, axis=-1)
        return clamped, moved

    def flat_index(self, block: int, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        """State-vector index of node (i, j) in block 0/1/2 = η/u/v"""
        return block * self.cells + np.asarray(j) + np.asarray(i) * self.ny

    def vectorize(self, fields: np.ndarray) -> np.ndarray:
        """(3, N_y, N_x) -> length 3*N_x*N_y vector, blocks column-major"""
        fields = np.asarray(fields, dtype=float)
        if fields.shape != (3,) + self.shape:
            raise ValueError(f"expected fields of shape {(3,) + self.shape}, got {fields.shape}")
        return np.concatenate([f.ravel(order="F") for f in fields])

    def unvectorize(self, vector: np.ndarray) -> np.ndarray:
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.d,):
            raise ValueError(f"expected a vector of length {self.d}, got {vector.shape}")
        return vector.reshape((3, self.nx, self.ny)).transpose(0, 2, 1)


@dataclass(frozen=True)
class SwParams:
    g: float
    H: np.ndarray
    f0: float = 0.0
    beta: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "H", frozen(require_finite(self.H, "bathymetry")))
        if self.g <= 0:
            raise ValueError(f"gravity must be positive, got {self.g}")

    @classmethod
    def from_latitude(
        cls,
        H: np.ndarray,
        grid: SwGrid,
        psi0_deg: float,
        g: float = 9.81,
        omega: float = OMEGA,
        y0: Optional[float] = None,
    ) -> "SwParams":
        """β-plane Coriolis around latitude ψ0: f0 = 2Ω sin ψ0, β = 2Ω cos ψ0 / R"""
        psi0 = np.deg2rad(psi0_deg)
        return cls(
            g=g,
            H=H,
            f0=2.0 * omega * np.sin(psi0),
            beta=2.0 * omega * np.cos(psi0) / EARTH_RADIUS,
            y0=0.5 * (grid.y_lo + grid.y_hi) if y0 is None else y0,
        )

    def coriolis(self, grid: SwGrid) -> np.ndarray:
        """f_1(y) = f0 + β(y - y0) per cell row, shape (N_y, 1)"""
        return (self.f0 + self.beta * (grid.y_nodes - self.y0))[:, None]


@dataclass(frozen=True)
class SwState:
    """Conservative variables U = (η, ηu, ηv) on the interior cells, shape (3, N_y, N_x)"""
    U: np.ndarray

    def __post_init__(self):
        U = frozen(require_finite(self.U, "shallow-water state"))
        if U.ndim != 3 or U.shape[0] != 3:
            raise ValueError(f"U must have shape (3, N_y, N_x), got {U.shape}")
        object.__setattr__(self, "U", U)

    @classmethod
    def from_primitive(cls, eta: np.ndarray, u: np.ndarray, v: np.ndarray) -> "SwState":
        eta = np.asarray(eta, dtype=float)
        return cls(U=np.stack([eta, eta * u, eta * v]))

    @classmethod
    def from_vector(cls, vector: np.ndarray, grid: SwGrid) -> "SwState":
        eta, u, v = grid.unvectorize(vector)
        return cls.from_primitive(eta, u, v)

    @property
    def eta(self) -> np.ndarray:
        return self.U[0]

    @property
    def u(self) -> np.ndarray:
        return self.U[1] / self.U[0]

    @property
    def v(self) -> np.ndarray:
        return self.U[2] / self.U[0]

    def zeta(self, params: SwParams) -> np.ndarray:
        """Free-surface elevation ζ = η - H"""
        return self.eta - params.H

    def primitive(self) -> np.ndarray:
        return np.stack([self.eta, self.u, self.v])

    def to_vector(self, grid: SwGrid) -> np.ndarray:
        return grid.vectorize(self.primitive())


BoundaryMode = Literal["dirichlet", "periodic"]


@dataclass(frozen=True)
class BoundaryForcing:
    """
    Ghost-cell values of η̄, ū, v̄ over time

    `frames` has shape (n_t, 3, N_y + 2, N_x + 2) holding primitive values;
    only the outer ring of each frame is read. Between timestamps the frames
    are interpolated linearly; a single frame is constant in time.
    """
    mode: BoundaryMode = "dirichlet"
    times: Optional[np.ndarray] = None
    frames: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode == "periodic":
            return
        if self.times is None or self.frames is None:
            raise ValueError("dirichlet forcing needs times and frames")
        times = frozen(np.atleast_1d(self.times))
        frames = frozen(require_finite(self.frames, "boundary frames"))
        if frames.ndim != 4 or frames.shape[0] != times.size or frames.shape[1] != 3:
            raise ValueError(f"frames must have shape (n_t, 3, N_y+2, N_x+2), got {frames.shape}")
        if np.any(np.diff(times) <= 0):
            raise ValueError("boundary timestamps must be strictly increasing")
        if np.any(frames[:, 0] <= 0):
            raise ValueError("boundary depth must be positive")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "frames", frames)

    @classmethod
    def periodic(cls) -> "BoundaryForcing":
        return cls(mode="periodic")

    @classmethod
    def constant_from_state(cls, state: SwState) -> "BoundaryForcing":
        """Hold the edge values of `state` (padded outward) fixed in time"""
        prim = np.pad(state.primitive(), ((0, 0), (1, 1), (1, 1)), mode="edge")
        return cls(mode="dirichlet", times=np.array([0.0]), frames=prim[None])

    def covers(self, t_start: float, t_end: float) -> bool:
        if self.mode == "periodic" or self.times.size == 1:
            return True
        return self.times[0] <= t_start and t_end <= self.times[-1]

    def frame(self, t: float) -> np.ndarray:
        """Primitive ghost frame at time t"""
        if self.times.size == 1:
            return self.frames[0]
        if t < self.times[0] or t > self.times[-1]:
            raise ValueError(f"t={t} outside boundary forcing range [{self.times[0]}, {self.times[-1]}]")
        hi = int(np.searchsorted(self.times, t, side="left"))
        if self.times[hi] == t:
            return self.frames[hi]
        lo = hi - 1
        w = (t - self.times[lo]) / (self.times[hi] - self.times[lo])
        return (1.0 - w) * self.frames[lo] + w * self.frames[hi]

    def fill(self, U: np.ndarray, t: float) -> np.ndarray:
        """Interior conservative (3, N_y, N_x) -> ghosted (3, N_y+2, N_x+2)"""
        if self.mode == "periodic":
            return np.pad(U, ((0, 0), (1, 1), (1, 1)), mode="wrap")
        full = np.empty((3, U.shape[1] + 2, U.shape[2] + 2))
        full[:, 1:-1, 1:-1] = U
        prim = self.frame(t)
        if prim.shape[1:] != full.shape[1:]:
            raise ValueError(f"boundary frame shape {prim.shape[1:]} does not match grid {full.shape[1:]}")
        cons = np.stack([prim[0], prim[0] * prim[1], prim[0] * prim[2]])
        full[:, 0, :] = cons[:, 0, :]
        full[:, -1, :] = cons[:, -1, :]
        full[:, :, 0] = cons[:, :, 0]
        full[:, :, -1] = cons[:, :, -1]
        return full


@dataclass(frozen=True)
class DrifterSet:
    """N_d drifter positions (x, y) in metres, rows sorted by ascending id"""
    positions: np.ndarray
    ids: Optional[np.ndarray] = None
    t: float = 0.0

    def __post_init__(self):
        positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if positions.shape[1] != 2:
            raise ValueError(f"positions must have shape (N_d, 2), got {positions.shape}")
        require_finite(positions, "drifter positions")
        ids = np.arange(positions.shape[0]) if self.ids is None else np.asarray(self.ids)
        if ids.shape != (positions.shape[0],):
            raise ValueError("one id per drifter required")
        order = np.argsort(ids, kind="stable")
        object.__setattr__(self, "positions", frozen(positions[order]))
        object.__setattr__(self, "ids", ids[order])

    @property
    def N_d(self) -> int:
        return self.positions.shape[0]

    def moved_to(self, positions: np.ndarray, t: float) -> "DrifterSet":
        return DrifterSet(positions=positions, ids=self.ids, t=t)


@dataclass(frozen=True)
class ObsSelection:
    """Nearest grid node (i, j) per drifter and the state indices of u and v there"""
    nodes: np.ndarray
    u_index: np.ndarray
    v_index: np.ndarray

    @property
    def d_y(self) -> int:
        return 2 * self.nodes.shape[0]

    def gather_index(self) -> np.ndarray:
        """Drifter-major (u, v) pairs: [u_1, v_1, u_2, v_2, ...]"""
        return np.column_stack([self.u_index, self.v_index]).ravel()
