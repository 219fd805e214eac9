"""
Drifter kinematics and the Lagrangian observation operator.

Observations are the (u, v) values at the grid node nearest each drifter,
stacked drifter-major in ascending id order: [u_1, v_1, u_2, v_2, ...].
"""
from typing import List, Optional, Sequence, Tuple, Union
import numpy as np
from scipy.interpolate import RegularGridInterpolator
import logging

from app.models.ocean import DrifterSet, ObsSelection, SwGrid
from app.models.state import ObsVector, PredictedLocations
from app.services.state_space import ObservationModel
from app.utils.cache import SimpleCache, generate_array_hash

logger = logging.getLogger(__name__)

SigmaY = Union[float, Sequence[float], np.ndarray]


def _interpolate(field: np.ndarray, grid: SwGrid, positions: np.ndarray, method: str) -> np.ndarray:
    # fields are held constant between the last node and the domain edge
    query = np.clip(positions, [grid.x_lo, grid.y_lo], [grid.x_nodes[-1], grid.y_nodes[-1]])
    interp = RegularGridInterpolator(
        (grid.y_nodes, grid.x_nodes), field, method="linear" if method == "bilinear" else method,
        bounds_error=False, fill_value=None,
    )
    return interp(query[:, ::-1])


def advect_drifters(
    drifters: DrifterSet,
    velocities: Sequence[Tuple[np.ndarray, np.ndarray]],
    tau: float,
    grid: SwGrid,
    interpolation: str = "bilinear",
) -> DrifterSet:
    """
    L = len(velocities) Euler steps x <- x + τ·(u(x), v(x))

    Velocities are interpolated from the gridded fields of each inner state;
    positions leaving the domain are clamped back onto its boundary.
    """
    if interpolation not in ("bilinear", "nearest"):
        raise ValueError(f"Unknown interpolation: {interpolation}")
    pos = np.array(drifters.positions, dtype=float)
    clamped_total = 0
    for u, v in velocities:
        step = np.column_stack([
            _interpolate(u, grid, pos, interpolation),
            _interpolate(v, grid, pos, interpolation),
        ])
        pos, moved = grid.clamp(pos + tau * step)
        clamped_total += int(moved.sum())
    if clamped_total:
        logger.warning(f"Clamped {clamped_total} drifter positions to the domain boundary")
    return drifters.moved_to(pos, drifters.t + tau * len(velocities))


def select_observed_indices(drifters: Union[DrifterSet, PredictedLocations], grid: SwGrid) -> ObsSelection:
    """Nearest of the four surrounding nodes, ties to the smallest (i, then j)"""
    pos = np.asarray(drifters.positions, dtype=float)
    i0 = np.clip(np.floor((pos[:, 0] - grid.x_lo) / grid.dx).astype(int), 0, max(grid.nx - 2, 0))
    j0 = np.clip(np.floor((pos[:, 1] - grid.y_lo) / grid.dy).astype(int), 0, max(grid.ny - 2, 0))
    # candidates in lexicographic (i, j) order so argmin keeps the tie-break
    di = np.array([0, 0, 1, 1])
    dj = np.array([0, 1, 0, 1])
    ci = np.minimum(i0[:, None] + di, grid.nx - 1)
    cj = np.minimum(j0[:, None] + dj, grid.ny - 1)
    dist2 = (pos[:, :1] - grid.x_nodes[ci]) ** 2 + (pos[:, 1:] - grid.y_nodes[cj]) ** 2
    best = np.argmin(dist2, axis=1)
    rows = np.arange(pos.shape[0])
    i = ci[rows, best]
    j = cj[rows, best]
    return ObsSelection(
        nodes=np.column_stack([i, j]),
        u_index=grid.flat_index(1, i, j),
        v_index=grid.flat_index(2, i, j),
    )


def _noise_std(sigma_y: SigmaY, n_drifters: int) -> np.ndarray:
    sigma = np.asarray(sigma_y, dtype=float)
    if sigma.ndim == 0:
        return np.full(2 * n_drifters, float(sigma))
    if sigma.shape != (n_drifters,):
        raise ValueError(f"per-drifter sigma_y needs {n_drifters} entries, got {sigma.shape}")
    return np.repeat(sigma, 2)


def observe(
    state: np.ndarray,
    sel: ObsSelection,
    sigma_y: SigmaY,
    rng: Optional[np.random.Generator] = None,
    k: int = 0,
) -> ObsVector:
    """𝒪(z), plus N(0, σ_y²) noise when an rng is supplied"""
    index = sel.gather_index()
    if index.size and (index.min() < 0 or index.max() >= state.size):
        raise IndexError(f"observation index out of bounds for state of length {state.size}")
    values = np.asarray(state, dtype=float)[index]
    if rng is not None:
        values = values + _noise_std(sigma_y, sel.nodes.shape[0]) * rng.standard_normal(values.size)
    return ObsVector(values=values, k=k)


def likelihood_known(state: np.ndarray, y: np.ndarray, sel: ObsSelection, sigma_y: SigmaY) -> float:
    y = np.asarray(y, dtype=float)
    if y.shape != (sel.d_y,):
        raise ValueError(f"observation has shape {y.shape}, expected ({sel.d_y},)")
    r = (y - np.asarray(state)[sel.gather_index()]) / _noise_std(sigma_y, sel.nodes.shape[0])
    return -0.5 * float(r @ r)


def likelihood_unknown(
    state: np.ndarray,
    y: np.ndarray,
    xbar: PredictedLocations,
    grid: SwGrid,
    sigma_y: SigmaY,
) -> float:
    """G((z, x̄), y): the known-location likelihood at the predicted positions"""
    return likelihood_known(state, y, select_observed_indices(xbar, grid), sigma_y)


class DrifterObservationModel(ObservationModel):
    """
    Y = 𝒪_x(Z) + V at drifter positions x

    With `tracks` the positions at t_k are known; otherwise they must be
    passed as `locations` (predicted x̄ in the unknown-location filter).
    """

    def __init__(self, grid: SwGrid, sigma_y: SigmaY, n_drifters: int, tracks: Optional[List[DrifterSet]] = None):
        self.grid = grid
        self.n_drifters = n_drifters
        self.d_y = 2 * n_drifters
        self.sigma_y = sigma_y
        self._std = _noise_std(sigma_y, n_drifters)
        self.tracks = tracks
        self._selections = SimpleCache(max_size=256, name="selection")

    def noise_std(self) -> np.ndarray:
        return self._std

    def selection(self, k: int, locations=None) -> ObsSelection:
        if locations is None:
            if self.tracks is None:
                raise ValueError("drifter positions unknown: pass locations or construct with tracks")
            locations = self.tracks[k]
        key = (k, generate_array_hash(np.asarray(locations.positions)))
        sel = self._selections.get(key)
        if sel is None:
            sel = select_observed_indices(locations, self.grid)
            self._selections.set(key, sel)
        return sel

    def mean(self, state: np.ndarray, k: int, locations=None) -> np.ndarray:
        return np.asarray(state)[self.selection(k, locations).gather_index()]

    def with_tracks(self, tracks: Optional[List[DrifterSet]]) -> "DrifterObservationModel":
        return DrifterObservationModel(self.grid, self.sigma_y, self.n_drifters, tracks)
