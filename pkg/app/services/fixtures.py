"""
Shallow-water scenario fixtures.

A fixture is a JSON manifest pointing at plain CSV grids (bathymetry,
initial η/u/v, ghost-ring boundary frames per timestamp) and a drifter CSV
with columns id, t, x, y, u_obs, v_obs. Paths in the manifest are relative
to the manifest's directory.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict
import json
import numpy as np
import pandas as pd
import logging

from app.models.ocean import BoundaryForcing, DrifterSet, SwGrid, SwParams, SwState
from app.models.request import SwConfig

logger = logging.getLogger(__name__)

DRIFTER_COLUMNS = ["id", "t", "x", "y", "u_obs", "v_obs"]


@dataclass(frozen=True)
class SwFixture:
    grid: SwGrid
    params: SwParams
    state0: SwState
    bc: BoundaryForcing
    drifters: DrifterSet
    psi0_deg: float


def make_synthetic_sw_fixture(cfg: SwConfig, rng: np.random.Generator) -> SwFixture:
    """
    Twin-experiment scenario: sloping bathymetry, a divergence-free gyre
    with a small surface bump, edges held at their initial values, and
    drifters seeded in the middle half of the domain.
    """
    grid = SwGrid(nx=cfg.nx, ny=cfg.ny, dx=cfg.dx, dy=cfg.dy, x_lo=cfg.x_lo, y_lo=cfg.y_lo)
    Lx, Ly = grid.nx * grid.dx, grid.ny * grid.dy
    X, Y = np.meshgrid((grid.x_nodes - grid.x_lo) / Lx, (grid.y_nodes - grid.y_lo) / Ly)
    H = cfg.mean_depth + cfg.depth_slope * X
    zeta = 0.05 * np.sin(np.pi * X) * np.sin(np.pi * Y)
    u = -cfg.gyre_speed * (Lx / Ly) * np.sin(np.pi * X) * np.cos(np.pi * Y)
    v = cfg.gyre_speed * np.cos(np.pi * X) * np.sin(np.pi * Y)
    state0 = SwState.from_primitive(H + zeta, u, v)
    params = SwParams.from_latitude(H, grid, cfg.psi0_deg, g=cfg.g, omega=cfg.omega)

    lo = np.array([grid.x_lo + 0.25 * Lx, grid.y_lo + 0.25 * Ly])
    positions = lo + rng.uniform(0.0, 0.5, size=(cfg.n_drifters, 2)) * np.array([Lx, Ly])
    drifters = DrifterSet(positions=positions, ids=np.arange(cfg.n_drifters), t=0.0)
    logger.info(f"Synthetic fixture: {grid.nx}x{grid.ny} grid, {cfg.n_drifters} drifters")
    return SwFixture(
        grid=grid, params=params, state0=state0, bc=BoundaryForcing.constant_from_state(state0),
        drifters=drifters, psi0_deg=cfg.psi0_deg,
    )


def _save_grid(path: Path, values: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(values), delimiter=",", fmt="%.17g")


def _load_grid(path: Path, shape) -> np.ndarray:
    values = np.loadtxt(path, delimiter=",", ndmin=2)
    if values.shape != tuple(shape):
        raise ValueError(f"{path.name}: expected grid of shape {tuple(shape)}, got {values.shape}")
    return values


def write_sw_fixture(fixture: SwFixture, directory: Path) -> Path:
    """Write manifest + CSV grids; returns the manifest path"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    grid = fixture.grid
    _save_grid(directory / "H.csv", fixture.params.H)
    initial: Dict[str, str] = {}
    for name, values in zip(("eta", "u", "v"), fixture.state0.primitive()):
        initial[name] = f"{name}0.csv"
        _save_grid(directory / initial[name], values)

    bc = fixture.bc
    if bc.mode != "dirichlet":
        raise ValueError("only dirichlet boundary forcing can be written to a fixture")
    frames = []
    for n, frame in enumerate(bc.frames):
        entry = {}
        for name, values in zip(("eta", "u", "v"), frame):
            entry[name] = f"boundary_{n:03d}_{name}.csv"
            _save_grid(directory / entry[name], values)
        frames.append(entry)

    d = fixture.drifters
    pd.DataFrame({
        "id": d.ids, "t": d.t, "x": d.positions[:, 0], "y": d.positions[:, 1],
        "u_obs": np.nan, "v_obs": np.nan,
    })[DRIFTER_COLUMNS].to_csv(directory / "drifters.csv", index=False, float_format="%.17g")

    manifest = {
        "nx": grid.nx, "ny": grid.ny, "dx": grid.dx, "dy": grid.dy,
        "x_lo": grid.x_lo, "y_lo": grid.y_lo,
        "units": {"length": "m", "time": "s", "velocity": "m/s", "depth": "m"},
        "g": fixture.params.g, "psi0_deg": fixture.psi0_deg,
        "f0": fixture.params.f0, "beta": fixture.params.beta, "y0": fixture.params.y0,
        "bathymetry": "H.csv",
        "initial": initial,
        "boundary": {"times": [float(t) for t in bc.times], "frames": frames},
        "drifters": "drifters.csv",
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    logger.info(f"Fixture written to {path}")
    return path


def load_sw_fixture(manifest_path: Path) -> SwFixture:
    """Read a fixture manifest; drifter positions are taken at each id's earliest t"""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    try:
        m = json.loads(manifest_path.read_text())
        grid = SwGrid(nx=m["nx"], ny=m["ny"], dx=m["dx"], dy=m["dy"], x_lo=m.get("x_lo", 0.0), y_lo=m.get("y_lo", 0.0))
        H = _load_grid(base / m["bathymetry"], grid.shape)
        eta, u, v = (_load_grid(base / m["initial"][name], grid.shape) for name in ("eta", "u", "v"))
        frames = np.stack([
            np.stack([_load_grid(base / f[name], grid.ghost_shape) for name in ("eta", "u", "v")])
            for f in m["boundary"]["frames"]
        ])
        bc = BoundaryForcing(mode="dirichlet", times=np.asarray(m["boundary"]["times"], dtype=float), frames=frames)
        drifter_df = pd.read_csv(base / m["drifters"], float_precision="round_trip")
    except KeyError as e:
        raise ValueError(f"fixture manifest {manifest_path} is missing key {e}") from e

    missing = set(DRIFTER_COLUMNS) - set(drifter_df.columns)
    if missing:
        raise ValueError(f"drifter CSV is missing columns {sorted(missing)}")
    first = drifter_df.sort_values(["id", "t"]).groupby("id", as_index=False).first()
    drifters = DrifterSet(positions=first[["x", "y"]].to_numpy(), ids=first["id"].to_numpy(), t=float(first["t"].min()))

    if "f0" in m:
        params = SwParams(g=m.get("g", 9.81), H=H, f0=m["f0"], beta=m.get("beta", 0.0), y0=m.get("y0", 0.0))
    else:
        params = SwParams.from_latitude(H, grid, m.get("psi0_deg", 0.0), g=m.get("g", 9.81))
    logger.info(f"Loaded fixture {manifest_path}: {grid.nx}x{grid.ny}, {drifters.N_d} drifters")
    return SwFixture(
        grid=grid, params=params, state0=SwState.from_primitive(eta, u, v), bc=bc,
        drifters=drifters, psi0_deg=m.get("psi0_deg", 0.0),
    )


class CopernicusLoader:
    """
    Maps a Copernicus reanalysis extract onto a fixture manifest.

    An implementation regrids sea-surface height to ζ (η = H + ζ), takes
    surface currents as u, v at the first timestamp, writes the edge ring of
    every hourly frame as boundary frames, and GEBCO depths as H.
    """

    def to_manifest(self, source: Path, directory: Path) -> Path:
        raise NotImplementedError("Copernicus ingestion is not bundled; write a fixture manifest instead")


class NoaaDrifterLoader:
    """
    Maps hourly NOAA drifter records (id, time, lat, lon, ve, vn) onto the
    drifter CSV schema id, t, x, y, u_obs, v_obs in the fixture's metric frame.
    """

    def to_drifter_csv(self, source: Path, destination: Path) -> Path:
        raise NotImplementedError("NOAA drifter ingestion is not bundled; provide drifters.csv directly")
