# tests/test_pipeline.py
import json
import os

import numpy as np
import pytest

from modules.config import ConfigManager
from modules.errors import Os2Error, StageError
from modules.hyper_reduction import build_residual_eq
from modules.metrics import compute_E_avg_opt
from modules.pipeline import (
    eim_error_curve,
    feasible_sizes,
    load_offline,
    run_offline,
    run_online_variant,
    run_pipeline,
    run_speedup,
    speedup_parameter,
    stage,
    sweep_sizes,
)
from modules.storage import read_csv


def test_stage_wraps_toolkit_errors():
    with pytest.raises(StageError) as info:
        with stage("harvest"):
            raise Os2Error("boom")
    assert info.value.stage == "harvest"
    assert isinstance(info.value.cause, Os2Error)
    # other exceptions pass through untouched
    with pytest.raises(KeyError):
        with stage("harvest"):
            raise KeyError("x")


def test_sweep_sizes(coarse_cfg):
    assert sweep_sizes(coarse_cfg) == [(2, 2)]
    coarse_cfg.online.m_list = [2, 4]
    coarse_cfg.online.n_factor = 2
    assert sweep_sizes(coarse_cfg) == [(4, 2), (8, 4)]


def test_feasible_sizes_drop_oversized_requests(trained):
    assert feasible_sizes(trained.library, [(2, 2), (50, 50)]) == [(2, 2)]


def test_speedup_parameter(coarse_cfg):
    p = speedup_parameter(coarse_cfg, 4)
    assert p.q_a == 3
    assert p.E1 == pytest.approx(27.5)
    assert p.s == pytest.approx(0.7)


def test_eim_error_curve_rows(trained):
    m_max = min(arch.basis.m for arch in trained.library)
    rows = eim_error_curve(trained.library, trained.snapshots, range(1, m_max + 1))
    for label in ("int", "ext"):
        errors = [r["linf_error"] for r in rows if r["archetype"] == label]
        assert len(errors) == m_max
        assert all(e >= 0.0 for e in errors)


@pytest.mark.slow
def test_pipeline_end_to_end(coarse_cfg, tmp_path):
    artifacts, reports = str(tmp_path / "artifacts"), str(tmp_path / "reports")
    result = run_pipeline(coarse_cfg, artifacts, reports)

    assert result.offline.sizes == [(2, 2)]
    assert len(result.reports) == 2 * 3
    for report in result.reports:
        assert len(report.errors) == coarse_cfg.training.n_test
        assert np.isfinite(report.e_avg)
        assert report.e_avg_opt <= 1.0
    assert [s.n_dd for s in result.speedups] == [3]

    rows = read_csv(os.path.join(reports, "errors.csv"))
    assert {(r["quadrature"], r["objective"]) for r in rows} == {
        (q, o) for q in ("hfq", "eq") for o in ("hfq", "eq", "eim")}
    for name in ("per_configuration.csv", "timings.csv", "speedup.csv", "support.csv", "eq.csv", "eim.csv"):
        assert os.path.exists(os.path.join(reports, name))
    with open(os.path.join(reports, "summary.json"), encoding="utf-8") as f:
        summary = json.load(f)
    assert summary["experiment"] == "coarse"
    assert summary["sizes"] == [[2, 2]]

    # bundles restore the offline payloads on a fresh library
    library = load_offline(coarse_cfg, artifacts)
    for arch in library:
        trained_arch = result.offline.library[arch.label]
        np.testing.assert_array_equal(arch.basis.W, trained_arch.basis.W)
        np.testing.assert_array_equal(arch.element_weights[(2, 2)], trained_arch.element_weights[(2, 2)])
        np.testing.assert_array_equal(arch.eim_points[2], trained_arch.eim_points[2])


# =======================================
# DESK-SCALE ACCEPTANCE
# =======================================

NESTED = [(2, 2), (4, 4), (8, 8)]


@pytest.mark.slow
def test_errors_decay_over_nested_sizes(nested_run):
    cfg = nested_run.cfg
    assert nested_run.offline.sizes == NESTED
    opt, avg = [], []
    for n, m in NESTED:
        e_opt, _ = compute_E_avg_opt(nested_run.hf, n, m, cfg.mesh.background_cells)
        report = run_online_variant(nested_run.hf, n, m, "gn", "hfq", "hfq", cfg, e_opt)
        assert all(report.converged)
        opt.append(e_opt)
        avg.append(report.e_avg)
    for k in range(1, len(NESTED)):
        assert opt[k] <= opt[k - 1] * (1 + 1e-10)
        assert avg[k] <= 1.05 * avg[k - 1]
    for e, e_opt in zip(avg, opt):
        assert e <= 5.0 * e_opt


@pytest.mark.slow
def test_element_eq_keeps_the_error(nested_run):
    cfg = nested_run.cfg
    n, m = 4, 4
    hfq = run_online_variant(nested_run.hf, n, m, "gn", "hfq", "hfq", cfg)
    eq = run_online_variant(nested_run.hf, n, m, "gn", "eq", "hfq", cfg)
    assert abs(eq.e_avg - hfq.e_avg) <= 0.1 * hfq.e_avg

    arch = nested_run.offline.library["ext"]
    samples = nested_run.offline.projected["ext"]
    fractions = []
    for tol in (1e-10, 1e-6, 1e-3):
        result = build_residual_eq(arch, samples, n, m, tol, cfg.solver)
        fractions.append(result.fraction)
    # restore the weights the other tests use
    build_residual_eq(arch, samples, n, m, cfg.hyper_reduction.tol_eq, cfg.solver)
    assert fractions[2] < 1.0
    assert fractions[1] <= fractions[0]
    assert fractions[2] <= fractions[1]


@pytest.mark.slow
def test_eim_error_drops_tenfold(nested_run):
    library = nested_run.offline.library
    rows = eim_error_curve(library, nested_run.offline.snapshots, [2, 8])
    for arch in library:
        errors = {r["m"]: r["linf_error"] for r in rows if r["archetype"] == arch.label}
        assert errors[8] <= 0.1 * errors[2]
        assert len(set(arch.eim_points[8].tolist())) == 8


@pytest.mark.slow
def test_speedup_at_desk_resolution():
    cfg = ConfigManager().load("configs/desk.json")
    cfg.online.m_list = [cfg.online.speedup_nm]
    cfg.online.objectives = ["hfq", "eq"]
    cfg.online.solvers = ["gn"]
    offline = run_offline(cfg)
    n = cfg.online.n_factor * cfg.online.speedup_nm
    rows = run_speedup(offline.library, cfg, n, cfg.online.speedup_nm)
    assert [r.n_dd for r in rows] == [3, 5]
    for row in rows:
        assert row.speedup >= 5.0
