import numpy as np
import pytest
from scipy.integrate import trapezoid
from app.models.state import ObsVector, SampleSet, StateVector, TimeGrid
from app.services.state_space import (
    CovarianceError,
    DenseCovariance,
    DiagonalCovariance,
    LinearGaussianObservation,
    LinearGaussianTransition,
    simulate_trajectory,
)
from app.utils.helpers import NonFiniteError
from app.utils.rng import make_rng


def test_time_grid_uniform():
    """Test uniform observation times with inner steps"""
    grid = TimeGrid.uniform(3, L=10, tau=60.0)
    assert grid.n_obs == 3
    np.testing.assert_allclose(grid.times, [0.0, 600.0, 1200.0, 1800.0])
    assert grid.tau(2) == pytest.approx(60.0)
    np.testing.assert_allclose(grid.inner_times(1), np.arange(11) * 60.0)


def test_time_grid_rejects_bad_times():
    """Test that t_0 != 0 and non-increasing times are rejected"""
    with pytest.raises(ValueError):
        TimeGrid(times=np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        TimeGrid(times=np.array([0.0, 2.0, 2.0]))
    with pytest.raises(IndexError):
        TimeGrid.uniform(2).tau(3)


def test_state_vector_rejects_nan():
    """Test that non-finite states are rejected"""
    with pytest.raises(NonFiniteError):
        StateVector(values=np.array([0.0, np.nan]))
    with pytest.raises(ValueError):
        StateVector(values=np.zeros(4), layout="sw")


def test_containers_are_read_only():
    """Test that arrays inside containers cannot be mutated"""
    samples = SampleSet(samples=np.zeros((3, 2)), k=1)
    with pytest.raises(ValueError):
        samples.samples[0, 0] = 1.0
    y = ObsVector(values=[1.0, 2.0], k=1)
    assert y.d_y == 2


def test_linear_transition_logdensity_examples():
    """Test log-densities of the identity transition"""
    model = LinearGaussianTransition(np.ones(2), sigma_z=1.0)
    assert model.log_density(np.zeros(2), np.zeros(2), 1) == pytest.approx(0.0)
    assert model.log_density(np.zeros(2), np.array([1.0, 0.0]), 1) == pytest.approx(-0.5)


def test_linear_transition_inner_steps():
    """Test that L inner steps compose into one exact Gaussian step"""
    model = LinearGaussianTransition(np.full(3, 0.5), sigma_z=2.0, L=3)
    np.testing.assert_allclose(model.flow(np.ones(3), 1), np.full(3, 0.125))
    expected = 4.0 * (1 + 0.25 + 0.0625)
    np.testing.assert_allclose(model.noise.variances, np.full(3, expected))

    dense = LinearGaussianTransition(0.5 * np.eye(3), sigma_z=2.0, L=3)
    np.testing.assert_allclose(dense.covariance_matrix(), expected * np.eye(3))
    np.testing.assert_allclose(dense.transition_matrix(), model.transition_matrix())


def test_dense_covariance_rejects_indefinite():
    """Test covariance validation"""
    with pytest.raises(CovarianceError):
        DenseCovariance(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(CovarianceError):
        DenseCovariance(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(CovarianceError):
        DiagonalCovariance(np.array([1.0, -1.0]), 2)


def test_degenerate_covariance_has_no_density():
    """Test that σ_z = 0 samples zero noise but refuses a density"""
    model = LinearGaussianTransition(np.ones(2), sigma_z=0.0)
    np.testing.assert_array_equal(model.noise.sample(make_rng(0)), np.zeros(2))
    with pytest.raises(CovarianceError):
        model.log_density(np.zeros(2), np.zeros(2), 1)


def test_dense_and_diagonal_logpdf_agree():
    """Test that a diagonal dense covariance matches the diagonal form"""
    r = np.array([0.3, -1.2, 0.7])
    var = np.array([0.5, 2.0, 1.5])
    assert DenseCovariance(np.diag(var)).logpdf(r) == pytest.approx(DiagonalCovariance(var, 3).logpdf(r))


def test_observation_selects_coordinates():
    """Test the selection observation operator and its likelihood"""
    obs = LinearGaussianObservation(np.array([1, 3]), d=4, sigma_y=0.5)
    z = np.array([10.0, 11.0, 12.0, 13.0])
    np.testing.assert_array_equal(obs.mean(z, 1), [11.0, 13.0])
    assert obs.C.shape == (2, 4)
    assert obs.log_likelihood(z, np.array([11.5, 13.0]), 1) == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        obs.log_likelihood(z, np.zeros(3), 1)


def test_simulate_trajectory_is_reproducible():
    """Test that the same seed reproduces truth and observations"""
    model = LinearGaussianTransition(np.full(4, 0.2), sigma_z=0.05)
    obs = LinearGaussianObservation(np.arange(4), 4, 0.05)
    grid = TimeGrid.uniform(5)
    a = simulate_trajectory(model, obs, grid, np.ones(4), make_rng(7))
    b = simulate_trajectory(model, obs, grid, np.ones(4), make_rng(7))
    assert a.states.shape == (6, 4)
    assert a.n_obs == 5
    np.testing.assert_array_equal(a.observation_matrix(), b.observation_matrix())
    np.testing.assert_array_equal(a.states[0], np.ones(4))


@pytest.mark.slow
def test_linear_moments_match_lyapunov():
    """Test the stationary variance σ_z²/(1-a²) of the scalar AR(1) model"""
    a, sigma_z = 0.8, 0.3
    model = LinearGaussianTransition(np.array([a]), sigma_z=sigma_z)
    rng = make_rng(11)
    z = np.zeros(1)
    draws = []
    for n in range(200_000):
        z = model.sample(z, 1, rng)
        if n >= 1000:
            draws.append(z[0])
    assert np.var(draws) == pytest.approx(sigma_z ** 2 / (1 - a ** 2), rel=0.03)


def test_logdensity_normalizes_by_quadrature():
    """Test that the dropped-constant density integrates to sqrt(2π)σ in one dimension"""
    model = LinearGaussianTransition(np.array([0.5]), sigma_z=0.7)
    x = np.linspace(-10.0, 10.0, 20001)
    dens = np.exp([model.log_density(np.array([1.0]), np.array([v]), 1) for v in x])
    total = trapezoid(dens, x) / (np.sqrt(2.0 * np.pi) * 0.7)
    assert total == pytest.approx(1.0, rel=1e-6)


def test_noise_free_identity_flow_keeps_state():
    """Test zero noise with A = I gives constant states and exact observations"""
    model = LinearGaussianTransition(np.ones(3), sigma_z=0.0)
    obs = LinearGaussianObservation(np.array([0, 2]), 3, 0.0)
    z0 = np.array([0.3, -1.0, 2.5])
    traj = simulate_trajectory(model, obs, TimeGrid.uniform(4), z0, make_rng(1))
    np.testing.assert_array_equal(traj.states, np.tile(z0, (5, 1)))
    np.testing.assert_array_equal(traj.observation_matrix(), np.tile(z0[[0, 2]], (4, 1)))
