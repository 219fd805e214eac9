import numpy as np
import pytest
from app.models.ocean import DrifterSet, SwGrid
from app.models.response import ChainDiagnostics, RepeatStatus, RunReport
from app.services.output import (
    emit_histogram,
    emit_snapshot,
    histogram_frame,
    read_csv,
    read_report,
    step_frame,
    write_csv,
    write_report,
)


def test_histogram_of_zero_errors():
    """Test that all-zero errors give one bin at 0 with fraction 1"""
    hist = emit_histogram(np.zeros((3, 4)), sigma_y=0.1)
    assert len(hist.rows) == 1
    assert hist.rows[0].fraction == 1.0
    assert hist.total == 12
    assert hist.fraction_below_half_sigma == 1.0


def test_histogram_two_bins_split_at_half_sigma():
    """Test uniform errors on [0, σ_y] split evenly by two bins"""
    errors = np.array([0.0, 0.01, 0.02, 0.03, 0.07, 0.08, 0.09, 0.1])
    hist = emit_histogram(errors, sigma_y=0.1, bins=2)
    assert [r.fraction for r in hist.rows] == [0.5, 0.5]
    assert hist.rows[0].right == pytest.approx(0.05)
    assert sum(r.fraction for r in hist.rows) == pytest.approx(1.0, abs=1e-12)


def test_histogram_uses_absolute_errors():
    """Test sign-agnostic binning and the default 40 bins"""
    hist = emit_histogram(np.array([-0.2, 0.1, 0.0, 0.05]), sigma_y=0.2)
    assert len(hist.rows) == 40
    assert hist.rows[-1].right == pytest.approx(0.2)
    assert hist.rows[-1].count == 1
    assert hist.fraction_below_half_sigma == pytest.approx(0.75)
    with pytest.raises(ValueError):
        emit_histogram(np.array([]), 0.1)


def test_csv_round_trip(tmp_path):
    """Test CSV output parses back to identical floats"""
    means = np.array([[0.1, 1.0 / 3.0], [np.pi, -2.0e-17]])
    diags = [
        ChainDiagnostics(k=k, acceptance_rate=0.25, lag1_autocorrelation=0.9, unique_ancestors=7)
        for k in (1, 2)
    ]
    frame = step_frame(means, diags)
    path = write_csv(frame, tmp_path / "steps.csv")
    back = read_csv(path)
    np.testing.assert_array_equal(back[["mean_0", "mean_1"]].to_numpy(), means)
    assert list(back["k"]) == [1, 2]
    assert list(step_frame(means, diags, columns=1).columns[:2]) == ["k", "mean_0"]


def test_histogram_frame_round_trip(tmp_path):
    """Test the histogram table survives CSV"""
    hist = emit_histogram(np.array([0.01, 0.02, 0.07]), sigma_y=0.1, bins=3)
    path = write_csv(histogram_frame(hist), tmp_path / "hist.csv")
    back = read_csv(path)
    np.testing.assert_array_equal(back["fraction"].to_numpy(), [r.fraction for r in hist.rows])


def test_report_round_trip(tmp_path):
    """Test the JSON report parses back unchanged"""
    report = RunReport(
        status="ok", experiment="linear", n_obs=1, d=2, accuracy=0.5,
        repeats=[RepeatStatus(repeat=0, seed=0, status="ok", wall_clock_s=0.1)],
        histogram=emit_histogram(np.array([0.1, 0.3]), 0.1, bins=2),
    )
    path = write_report(report, tmp_path / "report.json")
    assert read_report(path) == report


def test_snapshot_files(tmp_path):
    """Test gridded fields and tracks up to t_k are written"""
    grid = SwGrid(nx=3, ny=2, dx=1.0, dy=1.0)
    fields = {"eta_true": np.ones(grid.shape), "u_true": np.zeros(grid.shape)}
    tracks = {"true": [DrifterSet(positions=np.array([[0.5, 0.5]]), t=float(t)) for t in range(3)]}
    outputs = emit_snapshot(fields, grid, tracks, [0, 1, 2], 1, tmp_path)
    snapshot = read_csv(outputs["snapshot_k1"])
    assert len(snapshot) == 12
    assert set(snapshot["field"]) == {"eta_true", "u_true"}
    track_rows = read_csv(outputs["tracks_k1"])
    assert list(track_rows["k"]) == [0, 1]
    with pytest.raises(ValueError):
        emit_snapshot({"eta": np.ones((3, 3))}, grid, {}, [], 0, tmp_path)
