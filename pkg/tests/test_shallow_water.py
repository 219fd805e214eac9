import numpy as np
import pytest
from app.models.ocean import BoundaryForcing, SwGrid, SwParams, SwState
from app.models.state import TimeGrid
from app.services.shallow_water import (
    CFLViolationError,
    NegativeDepthError,
    ShallowWaterTransition,
    residual,
    sw_flow,
    sw_path,
    sw_step,
)
from app.services.sine_noise import SineNoiseSpec
from app.models.ocean import DrifterSet
from app.services.drifters import DrifterObservationModel
from app.services.state_space import simulate_trajectory
from app.utils.rng import make_rng


def _grid(nx=8, ny=6, dx=1.0e4, dy=1.0e4):
    return SwGrid(nx=nx, ny=ny, dx=dx, dy=dy)


def _params(grid, depth=100.0, psi0=22.0):
    return SwParams.from_latitude(np.full(grid.shape, depth), grid, psi0)


def _bump(grid, depth=100.0, amplitude=0.1):
    y, x = np.meshgrid(np.arange(grid.ny), np.arange(grid.nx), indexing="ij")
    r2 = ((x - grid.nx / 2) / 2.0) ** 2 + ((y - grid.ny / 2) / 2.0) ** 2
    return SwState.from_primitive(depth + amplitude * np.exp(-r2), np.zeros(grid.shape), np.zeros(grid.shape))


def test_lake_at_rest_is_stationary():
    """Test that flat water at rest stays unchanged on a rotating plane"""
    grid = _grid()
    params = _params(grid)
    state = SwState.from_primitive(np.full(grid.shape, 100.0), np.zeros(grid.shape), np.zeros(grid.shape))
    bc = BoundaryForcing.constant_from_state(state)
    for integrator in ("heun", "euler"):
        new = sw_step(state, params, grid, bc, 0.0, 60.0, integrator)
        np.testing.assert_allclose(new.U, state.U, rtol=0, atol=1e-12 * 100.0)


def test_periodic_mode_conserves_mass():
    """Test that total η is conserved with periodic boundaries"""
    grid = _grid()
    params = SwParams(g=9.81, H=np.full(grid.shape, 100.0))
    state = _bump(grid)
    path = sw_path(state, params, grid, BoundaryForcing.periodic(), 0.0, 600.0, 10)
    mass0 = state.eta.sum()
    for s in path[1:]:
        assert abs(s.eta.sum() - mass0) / mass0 < 1e-10
    assert not np.allclose(path[-1].eta, state.eta)


def test_coriolis_turns_uniform_flow():
    """Test the rotation term on a uniform eastward flow varies with the row latitude"""
    grid = _grid()
    params = _params(grid)
    eta = np.full(grid.shape, 100.0)
    state = SwState.from_primitive(eta, np.full(grid.shape, 0.2), np.zeros(grid.shape))
    rhs = residual(state.U, params, grid, BoundaryForcing.periodic(), 0.0)
    f = params.coriolis(grid)
    np.testing.assert_allclose(rhs[0], 0.0, atol=1e-12)
    np.testing.assert_allclose(rhs[2], -f * 100.0 * 0.2 * np.ones(grid.shape), rtol=1e-12)
    # β-plane: rows further north turn faster
    assert np.all(np.diff(rhs[2][:, 0]) < 0)


def test_single_inner_step_equals_sw_step():
    """Test that L=1 composes to exactly one step"""
    grid = _grid()
    params = _params(grid)
    state = _bump(grid)
    bc = BoundaryForcing.constant_from_state(state)
    one = sw_step(state, params, grid, bc, 0.0, 60.0)
    flow = sw_flow(state, params, grid, bc, 0.0, 60.0, 1)
    np.testing.assert_array_equal(one.U, flow.U)


def test_cfl_violation_raises():
    """Test that a too-large step is refused"""
    grid = _grid(dx=1000.0, dy=1000.0)
    params = _params(grid)
    state = _bump(grid)
    with pytest.raises(CFLViolationError) as exc:
        sw_step(state, params, grid, BoundaryForcing.periodic(), 0.0, 100.0)
    assert exc.value.courant >= 1.0


def test_negative_depth_raises():
    """Test that a dry cell is reported with its position"""
    grid = _grid()
    params = _params(grid)
    eta = np.full(grid.shape, 100.0)
    eta[2, 3] = -1.0
    state = SwState.from_primitive(eta, np.zeros(grid.shape), np.zeros(grid.shape))
    with pytest.raises(NegativeDepthError) as exc:
        sw_step(state, params, grid, BoundaryForcing.periodic(), 0.0, 1.0)
    assert exc.value.cell == (2, 3)


def test_boundary_forcing_interpolates_frames():
    """Test linear interpolation between timestamped boundary frames"""
    frames = np.ones((2, 3, 4, 5))
    frames[1, 0] = 3.0
    bc = BoundaryForcing(times=np.array([0.0, 10.0]), frames=frames)
    np.testing.assert_allclose(bc.frame(5.0)[0], 2.0)
    assert bc.covers(0.0, 10.0)
    assert not bc.covers(0.0, 11.0)
    with pytest.raises(ValueError):
        bc.frame(12.0)


def test_state_vector_layout():
    """Test the η|u|v column-major vector layout"""
    grid = _grid(nx=3, ny=2)
    fields = np.arange(18, dtype=float).reshape(3, 2, 3) + 1.0
    vec = grid.vectorize(fields)
    np.testing.assert_array_equal(grid.unvectorize(vec), fields)
    assert vec[grid.flat_index(1, 2, 1)] == fields[1, 1, 2]


def test_transition_flow_matches_solver():
    """Test the model flow against sw_flow and its drifter variant"""
    grid = _grid()
    params = _params(grid)
    state = _bump(grid)
    bc = BoundaryForcing.constant_from_state(state)
    time_grid = TimeGrid.uniform(2, L=3, tau=60.0)
    model = ShallowWaterTransition(params, grid, bc, time_grid, SineNoiseSpec(nx=8, ny=6, J=3, sigma=1e-4))
    z = state.to_vector(grid)
    expected = sw_flow(state, params, grid, bc, 180.0, 360.0, 3).to_vector(grid)
    np.testing.assert_allclose(model.flow(z, 2), expected, rtol=1e-14)
    drifters = DrifterSet(positions=np.array([[3.0e4, 2.0e4]]))
    flow, moved = model.flow_with_drifters(z, 2, drifters)
    np.testing.assert_array_equal(flow, model.flow(z, 2))
    assert moved.t == pytest.approx(180.0)


def _hump_1d(n, g=1.0):
    grid = SwGrid(nx=n, ny=1, dx=1.0 / n, dy=1.0)
    x = (np.arange(n) + 0.5) / n
    eta = 1.0 + 0.1 * np.exp(-((x - 0.5) / 0.1) ** 2)
    state = SwState.from_primitive(eta[None, :], np.zeros((1, n)), np.zeros((1, n)))
    return grid, SwParams(g=g, H=np.ones((1, n))), state


def _released_hump(n, t_end=0.1):
    grid, params, state = _hump_1d(n)
    return sw_flow(state, params, grid, BoundaryForcing.periodic(), 0.0, t_end, 4 * n).eta[0]


def test_released_hump_self_convergence():
    """Test first-order self-convergence of a released water column under 4x refinement"""
    coarse = _released_hump(100)
    mid = _released_hump(400).reshape(100, 4).mean(axis=1)
    fine = _released_hump(1600).reshape(100, 16).mean(axis=1)
    factor = np.abs(coarse - mid).sum() / np.abs(mid - fine).sum()
    assert factor >= 3.0


def test_noise_free_trajectory_follows_solver():
    """Test a zero-noise truth run reproduces the deterministic flow bit for bit"""
    grid = _grid()
    params = _params(grid)
    state = _bump(grid)
    bc = BoundaryForcing.constant_from_state(state)
    time_grid = TimeGrid.uniform(3, L=2, tau=60.0)
    model = ShallowWaterTransition(params, grid, bc, time_grid, SineNoiseSpec(nx=8, ny=6, J=3, sigma=0.0))
    obs = DrifterObservationModel(grid, 0.01, 1)
    drifters = DrifterSet(positions=np.array([[3.0e4, 2.0e4]]))
    traj = simulate_trajectory(model, obs, time_grid, state.to_vector(grid), make_rng(0), drifters=drifters)
    for k in range(1, 4):
        np.testing.assert_array_equal(traj.states[k], model.flow(traj.states[k - 1], k))
    assert len(traj.tracks) == 4
    assert traj.tracks[-1].t == pytest.approx(360.0)
