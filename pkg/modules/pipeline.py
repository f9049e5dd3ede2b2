# modules/pipeline.py
"""
Experiment orchestration: offline training (harvest, POD, projected coefficients,
EQ weights, EIM points), online sweeps over (n, m) and solver/quadrature/objective
variants on the test set, the speed-up table, and report emission.

Every stage runs inside stage(); any Os2Error escapes as StageError naming the stage.
"""

import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from modules.components import ArchetypeLibrary, GlobalParameter, build_library, instantiate
from modules.config import ExperimentConfig
from modules.errors import Os2Error, StageError
from modules.hf_solvers import HfCbSolution, solve_benchmark_monolithic
from modules.hyper_reduction import (
    build_eim,
    build_port_eq,
    build_residual_eq,
    eim_select,
    sample_port_modes,
    support_report,
)
from modules.logger import logger
from modules.metrics import ErrorReport, SpeedupRow, compute_E_avg, compute_E_avg_opt
from modules.rom_online import (
    assemble_jump_system,
    build_reduced_models,
    initial_state,
    objective_port_weights,
    run_solver,
)
from modules.storage import load_library, save_library, save_snapshots, write_csv, write_json
from modules.task_manager import run_parallel
from modules.training import (
    ProjectedCoefficients,
    SnapshotSet,
    build_bases,
    draw_parameters,
    harvest,
    project_coefficients,
    solve_configurations,
)
from modules.utils import Stopwatch


@contextmanager
def stage(name: str, watch: Optional[Stopwatch] = None) -> Iterator[None]:
    """Logs stage boundaries and wraps failures into StageError."""
    logger.info(f"[PIPELINE] Stage '{name}' started")
    start = time.perf_counter()
    try:
        if watch is None:
            yield
        else:
            with watch.section(name):
                yield
    except StageError:
        raise
    except Os2Error as e:
        logger.error(f"[PIPELINE] Stage '{name}' failed: {e}")
        raise StageError(name, e) from e
    logger.info(f"[PIPELINE] Stage '{name}' done in {time.perf_counter() - start:.2f}s")


def sweep_sizes(cfg: ExperimentConfig) -> List[Tuple[int, int]]:
    return cfg.online.nm_pairs


def feasible_sizes(library: ArchetypeLibrary, sizes: Sequence[Tuple[int, int]]) -> List[Tuple[int, int]]:
    """Sizes every archetype basis can provide; the rest are dropped with a warning."""
    keep = []
    for n, m in sizes:
        short = [a.label for a in library if a.basis is None or a.basis.n < n or a.basis.m < m]
        if short:
            logger.warning(f"[PIPELINE] Skipping (n, m)=({n}, {m}): too few modes for {short}")
        else:
            keep.append((n, m))
    return keep


# =======================================
# OFFLINE
# =======================================

@dataclass
class OfflineResult:
    library: ArchetypeLibrary
    train_params: List[GlobalParameter]
    snapshots: SnapshotSet
    projected: ProjectedCoefficients
    sizes: List[Tuple[int, int]]
    eq_reports: List[Dict[str, object]] = field(default_factory=list)
    eim_reports: List[Dict[str, object]] = field(default_factory=list)
    watch: Stopwatch = field(default_factory=Stopwatch)


def run_offline(cfg: ExperimentConfig, artifacts: Optional[str] = None) -> OfflineResult:
    """Harvest, compress and hyper-reduce; persists snapshots and archetype bundles when artifacts is set."""
    watch = Stopwatch()
    workers = cfg.training.workers
    with stage("library", watch):
        library = build_library(cfg)
    with stage("harvest", watch):
        params = draw_parameters(cfg.parameters, cfg.training.n_train, cfg.training.seed_train)
        snapshots = harvest(library, params, cfg.solver, workers)
    sizes = sweep_sizes(cfg)
    with stage("pod", watch):
        n_max = max(n for n, _ in sizes)
        m_max = max(m for _, m in sizes)
        build_bases(library, snapshots, n_max, m_max)
        projected = project_coefficients(library, snapshots)
        sizes = feasible_sizes(library, sizes)

    result = OfflineResult(library, params, snapshots, projected, sizes, watch=watch)
    hr = cfg.hyper_reduction
    if "eq" in cfg.online.quadratures:
        with stage("element-eq", watch):
            for n, m in sizes:
                for arch in library:
                    w = build_residual_eq(arch, projected[arch.label], n, m, hr.tol_eq, cfg.solver, workers,
                                          hr.nnls_cap_factor)
                    result.eq_reports.append({"archetype": arch.label, "kind": "element", "n": n, "m": m, **w.to_dict()})
    if "eq" in cfg.online.objectives:
        with stage("port-eq", watch):
            for n, m in sizes:
                weights = build_port_eq(library, params, projected, n, m, hr.tol_eq_p, hr.seed,
                                        cap_factor=hr.nnls_cap_factor)
                for label, w in weights.items():
                    result.eq_reports.append({"archetype": label, "kind": "port", "n": n, "m": m, **w.to_dict()})
    if "eim" in cfg.online.objectives:
        with stage("eim", watch):
            for _, m in sizes:
                for arch in library:
                    build_eim(arch, m)
            result.eim_reports = eim_error_curve(library, snapshots, [m for _, m in sizes])

    if artifacts:
        with stage("persist", watch):
            save_snapshots(os.path.join(artifacts, "snapshots"), snapshots)
            save_library(os.path.join(artifacts, "bundles"), library, projected)
    logger.info(f"[PIPELINE] Offline done: {len(params)} configurations, sizes {sizes}")
    return result


def load_offline(cfg: ExperimentConfig, artifacts: str) -> ArchetypeLibrary:
    """Rebuilds the archetypes from the configuration and restores their bundles."""
    with stage("load-bundles"):
        library = build_library(cfg)
        load_library(os.path.join(artifacts, "bundles"), library)
    return library


def eim_error_curve(library: ArchetypeLibrary, snapshots: SnapshotSet, m_list: Sequence[int]) -> List[Dict[str, object]]:
    """In-sample relative L-infinity EIM reconstruction error of the port snapshots for each m."""
    rows = []
    for arch in library:
        _, W = arch.basis.truncated(0, arch.basis.m)
        modes = sample_port_modes(arch, W)
        data = sample_port_modes(arch, snapshots.port[arch.label])
        for m in m_list:
            if m > arch.basis.m:
                continue
            rows.append({"archetype": arch.label, "m": m, "linf_error": eim_select(modes, m).linf_error(data)})
    return rows


# =======================================
# ONLINE
# =======================================

def solve_test_set(library: ArchetypeLibrary, cfg: ExperimentConfig) -> Tuple[List[GlobalParameter], List[HfCbSolution]]:
    with stage("test-hf"):
        params = draw_parameters(cfg.parameters, cfg.training.n_test, cfg.training.seed_test)
        return params, solve_configurations(library, params, cfg.solver, cfg.training.workers, "test")


@dataclass
class OnlineRun:
    fields: List[np.ndarray]
    iterations: int
    objective: float
    converged: bool
    wall_time: float
    report: object


def solve_online(system, n: int, m: int, solver: str, quadrature: str, objective: str,
                 cfg: ExperimentConfig) -> OnlineRun:
    """Builds the reduced models and the jump system of one deployed system and runs one solver."""
    start = time.perf_counter()
    coupled = build_reduced_models(system, n, m, quadrature, cfg.solver)
    weights, include_jacobian = objective_port_weights(system, objective, n, m)
    jump = assemble_jump_system(coupled, weights, include_jacobian)
    state, report = run_solver(solver, coupled, jump, initial_state(coupled), cfg.solver)
    fields = coupled.fields(state)
    return OnlineRun(fields, report.iterations, report.final_objective, report.converged,
                     time.perf_counter() - start, report)


def run_online_variant(hf_solutions: Sequence[HfCbSolution], n: int, m: int, solver: str, quadrature: str,
                       objective: str, cfg: ExperimentConfig, e_avg_opt: float = float("nan")) -> ErrorReport:
    """One (n, m, solver, quadrature, objective) variant over the whole test set."""

    def job(hf: HfCbSolution) -> OnlineRun:
        return solve_online(hf.system, n, m, solver, quadrature, objective, cfg)

    runs = run_parallel(job, list(hf_solutions), cfg.training.workers, f"online-{solver}-{n}-{m}")
    e_avg, errors = compute_E_avg(hf_solutions, [r.fields for r in runs], cfg.mesh.background_cells)
    report = ErrorReport(
        n, m, solver, quadrature, objective, errors, e_avg, e_avg_opt,
        iterations=[r.iterations for r in runs],
        final_objectives=[r.objective for r in runs],
        wall_times=[r.wall_time for r in runs],
        converged=[r.converged for r in runs],
    )
    logger.info(f"[PIPELINE] (n, m)=({n}, {m}) {solver}/{quadrature}/{objective}: E_avg={e_avg:.4e} "
                f"E_avg_opt={e_avg_opt:.4e} iterations={report.iterations}")
    return report


def run_online_sweep(library: ArchetypeLibrary, hf_solutions: Sequence[HfCbSolution], cfg: ExperimentConfig,
                     sizes: Sequence[Tuple[int, int]], solvers: Optional[Sequence[str]] = None,
                     quadratures: Optional[Sequence[str]] = None,
                     objectives: Optional[Sequence[str]] = None) -> List[ErrorReport]:
    solvers = list(solvers or cfg.online.solvers)
    quadratures = list(quadratures or cfg.online.quadratures)
    objectives = list(objectives or cfg.online.objectives)
    reports = []
    with stage("online"):
        for n, m in sizes:
            e_opt, _ = compute_E_avg_opt(hf_solutions, n, m, cfg.mesh.background_cells)
            for solver in solvers:
                for quadrature in quadratures:
                    for objective in objectives:
                        reports.append(run_online_variant(hf_solutions, n, m, solver, quadrature, objective, cfg, e_opt))
    return reports


# =======================================
# SPEED-UP
# =======================================

def speedup_parameter(cfg: ExperimentConfig, n_dd: int) -> GlobalParameter:
    """Box midpoints with Q_a = N_dd - 1."""
    b = cfg.parameters
    mid = lambda box: 0.5 * (box[0] + box[1])
    return GlobalParameter(n_dd - 1, mid(b.E1), mid(b.E2), mid(b.E3), mid(b.s))


def run_speedup(library: ArchetypeLibrary, cfg: ExperimentConfig, n: int, m: int) -> List[SpeedupRow]:
    """t_hf of the monolithic solve against t_os2 of the hyper-reduced Gauss-Newton solve, per N_dd."""
    quadrature = "eq" if all((n, m) in a.element_weights for a in library) else "hfq"
    objective = "eq" if all((n, m) in a.port_weights for a in library) else "hfq"
    rows = []
    with stage("speedup"):
        for n_dd in cfg.online.speedup_ndd:
            if n_dd - 1 not in cfg.parameters.q_a:
                logger.warning(f"[PIPELINE] N_dd={n_dd} needs Q_a={n_dd - 1} outside {cfg.parameters.q_a}; skipped")
                continue
            param = speedup_parameter(cfg, n_dd)
            hf = solve_benchmark_monolithic(cfg.geometry, param, cfg.mesh.h_monolithic, cfg.solver, cfg.mesh.degree)
            run = solve_online(instantiate(library, param), n, m, "gn", quadrature, objective, cfg)
            rows.append(SpeedupRow(n_dd, hf.wall_time, run.wall_time, run.iterations))
            logger.info(f"[PIPELINE] N_dd={n_dd}: t_hf={hf.wall_time:.3f}s t_os2={run.wall_time:.3f}s "
                        f"speed-up {rows[-1].speedup:.1f} ({quadrature}/{objective})")
    return rows


# =======================================
# REPORTS
# =======================================

def write_reports(folder: str, cfg: ExperimentConfig, reports: Sequence[ErrorReport],
                  offline: Optional[OfflineResult] = None, speedups: Sequence[SpeedupRow] = (),
                  library: Optional[ArchetypeLibrary] = None) -> Dict[str, str]:
    """
    errors.csv, per_configuration.csv and summary.json hold deterministic numbers only;
    wall times go to timings.csv and speedup.csv.
    """
    paths = {}
    paths["errors"] = write_csv(os.path.join(folder, "errors.csv"), [r.to_row() for r in reports])
    per_config = [
        {"n": r.n, "m": r.m, "solver": r.solver, "quadrature": r.quadrature, "objective": r.objective,
         "config": k, "error": e, "iterations": it, "final_objective": f}
        for r in reports for k, (e, it, f) in enumerate(zip(r.errors, r.iterations, r.final_objectives))
    ]
    paths["per_configuration"] = write_csv(os.path.join(folder, "per_configuration.csv"), per_config)
    timings = [r.timing_row() for r in reports]
    if offline is not None:
        timings += [{"stage": k, "wall_time": v} for k, v in offline.watch.as_dict().items()]
    paths["timings"] = write_csv(os.path.join(folder, "timings.csv"), timings,
                                 ["stage", "n", "m", "solver", "quadrature", "objective", "mean_wall_time",
                                  "max_wall_time", "wall_time"])
    if speedups:
        paths["speedup"] = write_csv(os.path.join(folder, "speedup.csv"), [s.to_row() for s in speedups])
    if library is not None:
        paths["support"] = write_csv(os.path.join(folder, "support.csv"), support_report(library))
    summary = {"experiment": cfg.name, "variants": [r.to_dict() for r in reports]}
    if offline is not None:
        if offline.eq_reports:
            paths["eq"] = write_csv(os.path.join(folder, "eq.csv"), offline.eq_reports)
        if offline.eim_reports:
            paths["eim"] = write_csv(os.path.join(folder, "eim.csv"), offline.eim_reports)
        summary.update(n_train=len(offline.train_params), sizes=[list(s) for s in offline.sizes])
    paths["summary"] = write_json(os.path.join(folder, "summary.json"), summary)
    logger.info(f"[PIPELINE] Reports written to {folder}: {sorted(paths)}")
    return paths


@dataclass
class PipelineResult:
    offline: OfflineResult
    reports: List[ErrorReport]
    speedups: List[SpeedupRow]
    paths: Dict[str, str]


def run_pipeline(cfg: ExperimentConfig, artifacts: str, reports_folder: str) -> PipelineResult:
    """Offline, online sweep and speed-up in one call."""
    offline = run_offline(cfg, artifacts)
    _, hf_solutions = solve_test_set(offline.library, cfg)
    reports = run_online_sweep(offline.library, hf_solutions, cfg, offline.sizes)
    speedups = []
    n_s, m_s = cfg.online.n_factor * cfg.online.speedup_nm, cfg.online.speedup_nm
    if (n_s, m_s) in offline.sizes:
        speedups = run_speedup(offline.library, cfg, n_s, m_s)
    else:
        logger.warning(f"[PIPELINE] Speed-up size (n, m)=({n_s}, {m_s}) not in the sweep; table skipped")
    paths = write_reports(reports_folder, cfg, reports, offline, speedups, offline.library)
    return PipelineResult(offline, reports, speedups, paths)
