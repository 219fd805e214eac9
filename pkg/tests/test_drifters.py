import logging
import numpy as np
import pytest
from app.models.ocean import DrifterSet, SwGrid
from app.models.state import PredictedLocations
from app.services.drifters import (
    DrifterObservationModel,
    advect_drifters,
    likelihood_known,
    likelihood_unknown,
    observe,
    select_observed_indices,
)
from app.utils.rng import make_rng


def _grid(x_lo=0.0, y_lo=0.0):
    return SwGrid(nx=5, ny=4, dx=1000.0, dy=1000.0, x_lo=x_lo, y_lo=y_lo)


def _state(grid):
    return np.arange(grid.d, dtype=float)


def test_uniform_flow_translates_drifters():
    """Test Euler advection in a constant velocity field"""
    grid = _grid()
    u = np.full(grid.shape, 1.0)
    v = np.full(grid.shape, 0.5)
    drifters = DrifterSet(positions=np.array([[1000.0, 1000.0], [2500.0, 500.0]]))
    moved = advect_drifters(drifters, [(u, v)] * 3, 10.0, grid)
    np.testing.assert_allclose(moved.positions, drifters.positions + [30.0, 15.0])
    assert moved.t == pytest.approx(30.0)


def test_linear_flow_is_interpolated_exactly():
    """Test bilinear interpolation of a linear velocity field"""
    grid = _grid()
    x = grid.x_nodes[None, :] * np.ones(grid.shape)
    u = 1e-3 * x
    v = np.zeros(grid.shape)
    drifters = DrifterSet(positions=np.array([[1234.0, 1500.0]]))
    moved = advect_drifters(drifters, [(u, v)], 2.0, grid)
    assert moved.positions[0, 0] == pytest.approx(1234.0 * (1 + 2e-3))
    assert moved.positions[0, 1] == pytest.approx(1500.0)


def test_drifters_are_clamped_to_the_domain(caplog):
    """Test that drifters pushed outside are clamped and a warning is logged"""
    grid = _grid()
    u = np.full(grid.shape, 200.0)
    drifters = DrifterSet(positions=np.array([[3900.0, 1000.0]]))
    with caplog.at_level(logging.WARNING):
        moved = advect_drifters(drifters, [(u, np.zeros(grid.shape))], 10.0, grid)
    assert moved.positions[0, 0] == pytest.approx(grid.x_hi)
    assert grid.x_hi > grid.x_nodes[-1]
    assert "Clamped" in caplog.text


def test_velocity_past_last_node_is_held_constant():
    """Test drifters between the last node and the domain edge read the edge-node velocity"""
    grid = _grid()
    x = grid.x_nodes[None, :] * np.ones(grid.shape)
    u = 1e-3 * x
    drifters = DrifterSet(positions=np.array([[4500.0, 1000.0]]))
    moved = advect_drifters(drifters, [(u, np.zeros(grid.shape))], 100.0, grid)
    assert moved.positions[0, 0] == pytest.approx(4500.0 + 100.0 * 1e-3 * grid.x_nodes[-1])


def test_unknown_interpolation_rejected():
    """Test interpolation validation"""
    grid = _grid()
    with pytest.raises(ValueError):
        advect_drifters(DrifterSet(positions=np.zeros((1, 2))), [], 1.0, grid, interpolation="cubic")


def test_selection_tie_break():
    """Test exact ties resolve to the smallest i, then j"""
    grid = _grid()
    sel = select_observed_indices(DrifterSet(positions=np.array([[500.0, 500.0], [1500.0, 1000.0]])), grid)
    np.testing.assert_array_equal(sel.nodes, [[0, 0], [1, 1]])


def test_selection_matches_brute_force():
    """Test nearest-of-four against a scan over all nodes"""
    grid = _grid()
    rng = make_rng(0)
    positions = np.column_stack([
        rng.uniform(0.0, grid.x_nodes[-1], 200), rng.uniform(0.0, grid.y_nodes[-1], 200)
    ])
    sel = select_observed_indices(DrifterSet(positions=positions), grid)
    ii, jj = np.meshgrid(np.arange(grid.nx), np.arange(grid.ny), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    for p, node in zip(positions, sel.nodes):
        d2 = (p[0] - grid.x_nodes[ii]) ** 2 + (p[1] - grid.y_nodes[jj]) ** 2
        best = int(np.argmin(d2))
        assert (ii[best], jj[best]) == tuple(node)


def test_selection_is_translation_invariant():
    """Test that shifting grid and drifters together keeps the nodes"""
    positions = np.array([[1200.0, 2600.0], [3999.0, 10.0]])
    a = select_observed_indices(DrifterSet(positions=positions), _grid())
    b = select_observed_indices(DrifterSet(positions=positions + [5.0e5, -2.0e5]), _grid(5.0e5, -2.0e5))
    np.testing.assert_array_equal(a.nodes, b.nodes)


def test_observe_orders_by_drifter_id():
    """Test drifter-major (u, v) pairs in ascending id order"""
    grid = _grid()
    drifters = DrifterSet(positions=np.array([[3000.0, 2000.0], [0.0, 0.0]]), ids=np.array([7, 2]))
    sel = select_observed_indices(drifters, grid)
    y = observe(_state(grid), sel, 0.1)
    cells = grid.cells
    expected = [cells + 0, 2 * cells + 0, cells + 2 + 3 * 4, 2 * cells + 2 + 3 * 4]
    np.testing.assert_array_equal(y.values, expected)
    assert y.d_y == 4


def test_observe_adds_noise_with_rng():
    """Test noisy observations differ from the noiseless operator"""
    grid = _grid()
    sel = select_observed_indices(DrifterSet(positions=np.array([[1000.0, 1000.0]])), grid)
    clean = observe(_state(grid), sel, 0.1).values
    noisy = observe(_state(grid), sel, 0.1, rng=make_rng(1), k=3)
    assert noisy.k == 3
    assert not np.allclose(noisy.values, clean)


def test_likelihoods():
    """Test known and predicted-location likelihoods, including per-drifter σ_y"""
    grid = _grid()
    z = _state(grid)
    positions = np.array([[1000.0, 1000.0], [3000.0, 2000.0]])
    sel = select_observed_indices(DrifterSet(positions=positions), grid)
    y = observe(z, sel, 0.1).values
    assert likelihood_known(z, y, sel, 0.1) == 0.0
    shifted = y + np.array([0.1, 0.0, 0.0, 0.4])
    assert likelihood_known(z, shifted, sel, 0.1) == pytest.approx(-0.5 * (1.0 + 16.0))
    assert likelihood_known(z, shifted, sel, [0.1, 0.2]) == pytest.approx(-0.5 * (1.0 + 4.0))
    xbar = PredictedLocations(positions=positions + 10.0, k=1)
    assert likelihood_unknown(z, shifted, xbar, grid, 0.1) == pytest.approx(-0.5 * 17.0)
    with pytest.raises(ValueError):
        likelihood_known(z, y[:3], sel, 0.1)


def test_observation_model_positions():
    """Test known tracks versus explicitly passed locations"""
    grid = _grid()
    z = _state(grid)
    tracks = [DrifterSet(positions=np.array([[0.0, 0.0]])), DrifterSet(positions=np.array([[1000.0, 0.0]]))]
    known = DrifterObservationModel(grid, 0.1, 1, tracks=tracks)
    np.testing.assert_array_equal(known.mean(z, 1), [grid.cells + 4, 2 * grid.cells + 4])
    unknown = known.with_tracks(None)
    with pytest.raises(ValueError):
        unknown.mean(z, 1)
    np.testing.assert_array_equal(unknown.mean(z, 1, locations=tracks[1]), known.mean(z, 1))
