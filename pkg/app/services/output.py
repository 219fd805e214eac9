"""
Plot-ready CSV and JSON outputs of experiments.

Floats are written with 17 significant digits and read back with
round-trip precision, so parse(emit(x)) == x.
"""
from pathlib import Path
from typing import Dict, List, Optional, Sequence
import numpy as np
import pandas as pd
import logging

from app.config import settings
from app.models.ocean import DrifterSet, SwGrid
from app.models.response import ChainDiagnostics, Histogram, HistogramRow, RunReport

logger = logging.getLogger(__name__)


def emit_histogram(errors: np.ndarray, sigma_y: float, bins: int = 40) -> Histogram:
    """
    Histogram of absolute errors with `bins` uniform bins over [0, max error]

    Bins are right-open except the last, which is closed. Fractions divide
    by the total number of errors.
    """
    errors = np.abs(np.ravel(np.asarray(errors, dtype=float)))
    if errors.size == 0:
        raise ValueError("histogram of an empty error set")
    total = errors.size
    below = float(np.mean(errors <= 0.5 * sigma_y))
    top = float(errors.max())
    if top == 0.0:
        rows = [HistogramRow(left=0.0, right=0.0, count=total, fraction=1.0)]
        return Histogram(rows=rows, total=total, fraction_below_half_sigma=below)
    counts, edges = np.histogram(errors, bins=bins, range=(0.0, top))
    rows = [
        HistogramRow(left=float(edges[b]), right=float(edges[b + 1]), count=int(c), fraction=c / total)
        for b, c in enumerate(counts)
    ]
    return Histogram(rows=rows, total=total, fraction_below_half_sigma=below)


def histogram_frame(hist: Histogram) -> pd.DataFrame:
    return pd.DataFrame([r.model_dump() for r in hist.rows], columns=["left", "right", "count", "fraction"])


def snapshot_frame(fields: Dict[str, np.ndarray], grid: SwGrid) -> pd.DataFrame:
    """Long table (field, row, col, x, y, value) of named (N_y, N_x) grids"""
    rows, cols = np.meshgrid(np.arange(grid.ny), np.arange(grid.nx), indexing="ij")
    frames = []
    for name, values in fields.items():
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError(f"field {name} has shape {values.shape}, expected {grid.shape}")
        frames.append(pd.DataFrame({
            "field": name,
            "row": rows.ravel(),
            "col": cols.ravel(),
            "x": grid.x_nodes[cols.ravel()],
            "y": grid.y_nodes[rows.ravel()],
            "value": values.ravel(),
        }))
    return pd.concat(frames, ignore_index=True)


def tracks_frame(tracks: Dict[str, Sequence], times: Sequence[int]) -> pd.DataFrame:
    """Long table (kind, id, k, x, y) of drifter tracks, e.g. true / predicted / prior"""
    frames = []
    for kind, series in tracks.items():
        for k, item in zip(times, series):
            frames.append(pd.DataFrame({
                "kind": kind, "id": np.asarray(item.ids), "k": k,
                "x": item.positions[:, 0], "y": item.positions[:, 1],
            }))
    if not frames:
        return pd.DataFrame(columns=["kind", "id", "k", "x", "y"])
    return pd.concat(frames, ignore_index=True)


def emit_snapshot(
    fields: Dict[str, np.ndarray],
    grid: SwGrid,
    tracks: Dict[str, Sequence],
    track_times: Sequence[int],
    k: int,
    directory: Path,
) -> Dict[str, str]:
    """Write snapshot_k{k}.csv (gridded fields) and tracks_k{k}.csv (tracks up to t_k)"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    upto = [i for i, t in enumerate(track_times) if t <= k]
    cut = {kind: [series[i] for i in upto if i < len(series)] for kind, series in tracks.items()}
    grid_path = directory / f"snapshot_k{k:04d}.csv"
    track_path = directory / f"tracks_k{k:04d}.csv"
    write_csv(snapshot_frame(fields, grid), grid_path)
    write_csv(tracks_frame(cut, [track_times[i] for i in upto]), track_path)
    return {f"snapshot_k{k}": str(grid_path), f"tracks_k{k}": str(track_path)}


def step_frame(
    means: np.ndarray,
    diagnostics: Sequence[ChainDiagnostics],
    columns: Optional[int] = None,
) -> pd.DataFrame:
    """k, mean_0..mean_{c-1}, acceptance, unique ancestors, flow evaluations per step"""
    means = np.asarray(means, dtype=float)
    c = means.shape[1] if columns is None else min(columns, means.shape[1])
    frame = pd.DataFrame(means[:, :c], columns=[f"mean_{i}" for i in range(c)])
    frame.insert(0, "k", [d.k for d in diagnostics])
    frame["acceptance_rate"] = [d.acceptance_rate for d in diagnostics]
    frame["unique_ancestors"] = [d.unique_ancestors for d in diagnostics]
    frame["flow_evaluations"] = [d.flow_evaluations for d in diagnostics]
    return frame


def timing_frame(ks: Sequence[int], wall_ms: Sequence[float]) -> pd.DataFrame:
    return pd.DataFrame({"k": list(ks), "wall_ms": list(wall_ms)})


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=settings.csv_float_format)
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def write_report(report: RunReport, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2))
    return path


def read_report(path: Path) -> RunReport:
    return RunReport.model_validate_json(Path(path).read_text())
