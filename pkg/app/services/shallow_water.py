"""
Rotating shallow-water finite-volume solver.

Conservative form U_t + A(U)_x + B(U)_y = C(U) + D(U) with
U = (η, ηu, ηv), local Lax-Friedrichs interface fluxes and either a
forward-Euler or a two-stage Heun (RK2) update.
"""
from typing import List, Literal, Optional, Tuple
import numpy as np
import logging

from app.models.ocean import BoundaryForcing, DrifterSet, SwGrid, SwParams, SwState
from app.models.state import TimeGrid
from app.services.drifters import advect_drifters
from app.services.sine_noise import SineModeCovariance, SineNoiseSpec
from app.services.state_space import FlowBlowUpError, TransitionModel

logger = logging.getLogger(__name__)

Integrator = Literal["heun", "euler"]


class NegativeDepthError(ValueError):
    def __init__(self, cell: Tuple[int, int], value: float):
        self.cell = cell
        self.value = value
        super().__init__(f"Non-positive depth eta={value:.6g} at cell (row, col)={cell}")


class CFLViolationError(ValueError):
    def __init__(self, cell: Tuple[int, int], courant: float):
        self.cell = cell
        self.courant = courant
        super().__init__(f"CFL condition violated at cell (row, col)={cell}: courant number {courant:.4f} >= 1")


def _check_depth(eta: np.ndarray) -> None:
    """Checks the ghosted depth; the error carries interior (row, col)"""
    if np.all(eta > 0):
        return
    bad = np.argwhere(~(eta > 0))[0]
    raise NegativeDepthError((int(bad[0]) - 1, int(bad[1]) - 1), float(eta[tuple(bad)]))


def wave_speeds(full: np.ndarray, g: float) -> Tuple[np.ndarray, np.ndarray]:
    """|u| + sqrt(gη) and |v| + sqrt(gη) per cell"""
    eta = full[0]
    c = np.sqrt(g * eta)
    return np.abs(full[1] / eta) + c, np.abs(full[2] / eta) + c


def check_cfl(full: np.ndarray, g: float, grid: SwGrid, tau: float) -> float:
    """Largest τ(λx/Δx + λy/Δy) over the ghosted field; raises when >= 1"""
    lx, ly = wave_speeds(full, g)
    courant = tau * (lx / grid.dx + ly / grid.dy)
    worst = np.unravel_index(int(np.argmax(courant)), courant.shape)
    value = float(courant[worst])
    if not value < 1.0:
        # report interior coordinates (ghost row/col -1 and N)
        raise CFLViolationError((int(worst[0]) - 1, int(worst[1]) - 1), value)
    return value


def _bathymetry_gradient(params: SwParams, grid: SwGrid) -> Tuple[np.ndarray, np.ndarray]:
    # centered inside, one-sided at the edges
    H = params.H
    dHdy = np.gradient(H, grid.dy, axis=0) if grid.ny > 1 else np.zeros_like(H)
    dHdx = np.gradient(H, grid.dx, axis=1) if grid.nx > 1 else np.zeros_like(H)
    return dHdx, dHdy


def residual(
    U: np.ndarray,
    params: SwParams,
    grid: SwGrid,
    bc: BoundaryForcing,
    t: float,
    tau: Optional[float] = None,
) -> np.ndarray:
    """
    Semi-discrete right-hand side -(ΔA)/Δx - (ΔB)/Δy + C + D on the interior

    When `tau` is given the CFL condition is checked on the refilled ghosts.
    """
    full = bc.fill(U, t)
    _check_depth(full[0])
    if tau is not None:
        check_cfl(full, params.g, grid, tau)
    g = params.g
    eta, hu, hv = full
    u = hu / eta
    v = hv / eta
    pressure = 0.5 * g * eta ** 2
    A = np.stack([hu, hu * u + pressure, hu * v])
    B = np.stack([hv, hv * u, hv * v + pressure])
    lx, ly = wave_speeds(full, g)

    # x-interfaces between columns c and c+1, interior rows only
    lam_x = np.maximum(lx[1:-1, :-1], lx[1:-1, 1:])
    Fx = 0.5 * (A[:, 1:-1, :-1] + A[:, 1:-1, 1:]) - 0.5 * lam_x * (full[:, 1:-1, 1:] - full[:, 1:-1, :-1])
    # y-interfaces between rows r and r+1, interior columns only
    lam_y = np.maximum(ly[:-1, 1:-1], ly[1:, 1:-1])
    Fy = 0.5 * (B[:, :-1, 1:-1] + B[:, 1:, 1:-1]) - 0.5 * lam_y * (full[:, 1:, 1:-1] - full[:, :-1, 1:-1])

    rhs = -(Fx[:, :, 1:] - Fx[:, :, :-1]) / grid.dx - (Fy[:, 1:, :] - Fy[:, :-1, :]) / grid.dy

    dHdx, dHdy = _bathymetry_gradient(params, grid)
    eta_i = eta[1:-1, 1:-1]
    f = params.coriolis(grid)
    rhs[1] += g * eta_i * dHdx + f * hv[1:-1, 1:-1]
    rhs[2] += g * eta_i * dHdy - f * hu[1:-1, 1:-1]
    return rhs


def sw_step(
    state: SwState,
    params: SwParams,
    grid: SwGrid,
    bc: BoundaryForcing,
    t: float,
    tau: float,
    integrator: Integrator = "heun",
) -> SwState:
    """Advance the interior state by one time step τ"""
    U = state.U
    if U.shape[1:] != grid.shape:
        raise ValueError(f"state shape {U.shape[1:]} does not match grid {grid.shape}")
    U1 = U + tau * residual(U, params, grid, bc, t, tau)
    if integrator == "euler":
        return SwState(U=U1)
    if integrator != "heun":
        raise ValueError(f"Unknown integrator: {integrator}")
    U2 = U1 + tau * residual(U1, params, grid, bc, t + tau, tau)
    return SwState(U=0.5 * (U + U2))


def sw_flow(
    state: SwState,
    params: SwParams,
    grid: SwGrid,
    bc: BoundaryForcing,
    t_start: float,
    t_end: float,
    L: int,
    integrator: Integrator = "heun",
) -> SwState:
    """Compose L steps of size (t_end - t_start)/L"""
    return sw_path(state, params, grid, bc, t_start, t_end, L, integrator)[-1]


def sw_path(
    state: SwState,
    params: SwParams,
    grid: SwGrid,
    bc: BoundaryForcing,
    t_start: float,
    t_end: float,
    L: int,
    integrator: Integrator = "heun",
) -> List[SwState]:
    """States at the L+1 inner times t_start + lτ, l = 0..L"""
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    if not t_end > t_start:
        raise ValueError(f"t_end must exceed t_start, got [{t_start}, {t_end}]")
    if not bc.covers(t_start, t_end):
        raise ValueError(f"boundary forcing does not cover [{t_start}, {t_end}]")
    tau = (t_end - t_start) / L
    path = [state]
    for l in range(L):
        path.append(sw_step(path[-1], params, grid, bc, t_start + l * tau, tau, integrator))
    return path


class ShallowWaterTransition(TransitionModel):
    """Φ = L solver steps over (t_{k-1}, t_k], W = sine-mode forcing on η, u and v"""

    def __init__(
        self,
        params: SwParams,
        grid: SwGrid,
        bc: BoundaryForcing,
        time_grid: TimeGrid,
        noise: SineNoiseSpec,
        integrator: Integrator = "heun",
        interpolation: str = "bilinear",
    ):
        if (noise.nx, noise.ny) != (grid.nx, grid.ny):
            raise ValueError("noise spec and grid dimensions differ")
        self.params = params
        self.grid = grid
        self.bc = bc
        self.time_grid = time_grid
        self.integrator = integrator
        self.interpolation = interpolation
        self.dim = grid.d
        self.noise = SineModeCovariance(noise)
        logger.info(
            f"Shallow-water model initialized: {grid.nx}x{grid.ny}, L={time_grid.L}, "
            f"J={noise.J}, sigma={noise.sigma:g}, integrator={integrator}"
        )

    def _path(self, prev: np.ndarray, k: int) -> List[SwState]:
        t0, t1 = self.time_grid.times[k - 1], self.time_grid.times[k]
        try:
            state = SwState.from_vector(prev, self.grid)
        except ValueError as e:
            raise FlowBlowUpError(k, str(e)) from e
        return sw_path(state, self.params, self.grid, self.bc, t0, t1, self.time_grid.L, self.integrator)

    def flow(self, prev: np.ndarray, k: int) -> np.ndarray:
        return self._path(prev, k)[-1].to_vector(self.grid)

    def velocity_fields(self, state: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        _, u, v = self.grid.unvectorize(state)
        return u, v

    def flow_with_drifters(self, prev: np.ndarray, k: int, drifters: DrifterSet) -> Tuple[np.ndarray, DrifterSet]:
        """Deterministic flow plus drifters advected along its inner states"""
        path = self._path(prev, k)
        velocities = [(s.u, s.v) for s in path[:-1]]
        moved = advect_drifters(
            drifters, velocities, self.time_grid.tau(k), self.grid, interpolation=self.interpolation
        )
        return path[-1].to_vector(self.grid), moved
