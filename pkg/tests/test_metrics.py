# tests/test_metrics.py
import numpy as np
import pytest

from modules.errors import ConfigurationMismatchError
from modules.metrics import (
    ErrorReport,
    SpeedupRow,
    background_grid,
    compute_E_avg,
    project_local,
    relative_h1_error,
)


def test_background_grid_skips_holes(coarse_system):
    grid = background_grid(coarse_system, n_cells=20)
    nodes = np.vstack([c.mesh.nodes for c in coarse_system])
    box = np.prod(nodes.max(axis=0) - nodes.min(axis=0))
    assert 0 < len(grid) <= 20 * 20 * 4
    assert 0.0 < grid.weights.sum() <= box * (1 + 1e-12)
    # every kept point is covered by some component
    covered = np.zeros(len(grid), dtype=bool)
    for comp in coarse_system:
        covered |= comp.mesh.locate(grid.points, strict=False)[0] >= 0
    assert covered.all()


def test_relative_error_of_a_scaled_field(coarse_system):
    ones = [np.ones(c.space.n_dofs) for c in coarse_system]
    halves = [0.5 * f for f in ones]
    assert relative_h1_error(coarse_system, ones, halves, n_cells=10) == pytest.approx(0.5)
    assert relative_h1_error(coarse_system, ones, ones, n_cells=10) == 0.0
    with pytest.raises(ConfigurationMismatchError):
        relative_h1_error(coarse_system, ones, ones[:-1], n_cells=10)


def test_E_avg_requires_matching_sets():
    with pytest.raises(ConfigurationMismatchError):
        compute_E_avg([], [[np.zeros(3)]])


def test_projection_keeps_fields_in_the_reduced_space(trained):
    arch = trained.library["int"]
    Z, W = arch.basis.truncated(2, 2)
    u = arch.field(Z @ np.array([0.3, -0.1]) + W @ np.array([1.0, 0.2]))
    np.testing.assert_allclose(project_local(arch, u, 2, 2), u, atol=1e-10)
    # projection onto the empty space returns the lift
    empty = project_local(arch, u, 0, 0)
    expected = np.zeros_like(u) if arch.lift is None else arch.lift
    np.testing.assert_allclose(empty, expected)


def test_error_report_rows():
    report = ErrorReport(2, 2, "gn", "eq", "hfq", errors=[0.1, 0.3], e_avg=0.2, iterations=[3, 5],
                         wall_times=[0.5, 1.5], converged=[True, False])
    row = report.to_row()
    assert row["E_avg"] == 0.2
    assert row["mean_iterations"] == 4.0
    assert row["max_iterations"] == 5
    assert row["all_converged"] is False
    assert report.timing_row()["mean_wall_time"] == 1.0
    assert report.to_dict()["errors"] == [0.1, 0.3]
    with pytest.raises(ValueError):
        ErrorReport(2, 2, "gn", "eq", "hfq", errors=[-0.1])


def test_speedup_row():
    row = SpeedupRow(5, t_hf=10.0, t_os2=0.5, os2_iterations=4)
    assert row.speedup == 20.0
    assert row.to_row()["N_dd"] == 5
    assert SpeedupRow(3, 1.0, 0.0).speedup == float("inf")
