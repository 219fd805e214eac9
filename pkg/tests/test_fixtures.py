import json
import numpy as np
import pytest
from app.models.request import SwConfig
from app.services.fixtures import (
    CopernicusLoader,
    NoaaDrifterLoader,
    load_sw_fixture,
    make_synthetic_sw_fixture,
    write_sw_fixture,
)
from app.utils.rng import make_rng


def _small_config(**overrides):
    params = dict(nx=8, ny=6, J=3, n_drifters=3)
    params.update(overrides)
    return SwConfig(**params)


def test_synthetic_fixture_shapes():
    """Test the synthetic scenario is consistent with its grid"""
    fixture = make_synthetic_sw_fixture(_small_config(), make_rng(0))
    assert fixture.state0.U.shape == (3, 6, 8)
    assert fixture.params.H.shape == (6, 8)
    assert np.all(fixture.state0.eta > 0)
    assert fixture.drifters.N_d == 3
    lo = np.array([fixture.grid.x_lo, fixture.grid.y_lo])
    hi = np.array([fixture.grid.x_hi, fixture.grid.y_hi])
    assert np.all(fixture.drifters.positions > lo + 0.2 * (hi - lo))
    assert np.all(fixture.drifters.positions < lo + 0.8 * (hi - lo))
    assert fixture.params.f0 > 0


def test_fixture_round_trip(tmp_path):
    """Test writing and loading a fixture reproduces every field"""
    fixture = make_synthetic_sw_fixture(_small_config(), make_rng(1))
    manifest = write_sw_fixture(fixture, tmp_path)
    loaded = load_sw_fixture(manifest)
    assert loaded.grid == fixture.grid
    np.testing.assert_allclose(loaded.state0.U, fixture.state0.U, rtol=1e-14, atol=1e-14)
    np.testing.assert_array_equal(loaded.params.H, fixture.params.H)
    np.testing.assert_array_equal(loaded.bc.frames, fixture.bc.frames)
    np.testing.assert_array_equal(loaded.drifters.positions, fixture.drifters.positions)
    assert loaded.params.f0 == fixture.params.f0
    assert loaded.params.beta == fixture.params.beta


def test_config_accepts_written_fixture(tmp_path):
    """Test that a config can point at a fixture manifest"""
    manifest = write_sw_fixture(make_synthetic_sw_fixture(_small_config(), make_rng(2)), tmp_path)
    assert _small_config(fixture=manifest).fixture == manifest
    with pytest.raises(ValueError):
        _small_config(fixture=tmp_path / "missing.json")


def test_manifest_missing_key(tmp_path):
    """Test that an incomplete manifest is reported"""
    manifest = write_sw_fixture(make_synthetic_sw_fixture(_small_config(), make_rng(3)), tmp_path)
    data = json.loads(manifest.read_text())
    del data["bathymetry"]
    manifest.write_text(json.dumps(data))
    with pytest.raises(ValueError, match="bathymetry"):
        load_sw_fixture(manifest)


def test_grid_shape_mismatch(tmp_path):
    """Test that a CSV grid of the wrong shape is rejected"""
    manifest = write_sw_fixture(make_synthetic_sw_fixture(_small_config(), make_rng(4)), tmp_path)
    np.savetxt(tmp_path / "H.csv", np.ones((2, 2)), delimiter=",")
    with pytest.raises(ValueError, match="H.csv"):
        load_sw_fixture(manifest)


def test_external_loaders_are_not_bundled(tmp_path):
    """Test the data-source loaders only document the mapping"""
    with pytest.raises(NotImplementedError):
        CopernicusLoader().to_manifest(tmp_path / "in.nc", tmp_path)
    with pytest.raises(NotImplementedError):
        NoaaDrifterLoader().to_drifter_csv(tmp_path / "in.csv", tmp_path / "out.csv")
