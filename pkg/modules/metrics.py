# modules/metrics.py
"""
Error metrics on partition-of-unity combined fields: relative H1 errors on a
background quadrature grid, the out-of-sample average E_avg and its projection
counterpart E_avg_opt.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla

from modules.components import DeployedSystem, GlobalField
from modules.errors import ConfigurationMismatchError, Os2Error
from modules.fe_core import gauss_rule
from modules.hf_solvers import HfCbSolution
from modules.logger import logger


# =======================================
# BACKGROUND QUADRATURE
# =======================================

@dataclass
class BackgroundGrid:
    points: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.weights)


def background_grid(system: DeployedSystem, n_cells: int = 50, n_gauss: int = 2) -> BackgroundGrid:
    """
    Uniform n_cells^2 grid over the bounding box of the deployed meshes with an
    n_gauss^2 Gauss rule per cell; points covered by no component (holes) are dropped.
    """
    nodes = np.vstack([c.mesh.nodes for c in system.components])
    lo, hi = nodes.min(axis=0), nodes.max(axis=0)
    ref, w = gauss_rule(n_gauss, 2)
    xs = np.linspace(lo[0], hi[0], n_cells + 1)
    ys = np.linspace(lo[1], hi[1], n_cells + 1)
    hx, hy = np.diff(xs)[0], np.diff(ys)[0]
    cx, cy = np.meshgrid(xs[:-1], ys[:-1], indexing="xy")
    corners = np.column_stack([cx.ravel(), cy.ravel()])
    points = corners[:, None, :] + ref[None, :, :] * np.array([hx, hy])[None, None, :]
    weights = np.broadcast_to(w * hx * hy, (len(corners), len(w))).ravel()
    points = points.reshape(-1, 2)
    covered = np.zeros(len(points), dtype=bool)
    for comp in system.components:
        covered |= comp.mesh.locate(points, strict=False)[0] >= 0
    return BackgroundGrid(points[covered], weights[covered].copy())


def h1_norm_squared(values: np.ndarray, grads: np.ndarray, weights: np.ndarray) -> float:
    return float(weights @ (np.sum(values ** 2, axis=1) + np.sum(grads ** 2, axis=(1, 2))))


def evaluate_pou(system: DeployedSystem, fields: Sequence[np.ndarray], grid: BackgroundGrid) -> Tuple[np.ndarray, np.ndarray]:
    return GlobalField(system, fields).evaluate(grid.points, with_gradients=True)


def relative_h1_error(system: DeployedSystem, reference: Sequence[np.ndarray], approx: Sequence[np.ndarray],
                      grid: Optional[BackgroundGrid] = None, n_cells: int = 50) -> float:
    """|P[u_ref] - P[u]|_H1 / |P[u_ref]|_H1 with both fields combined by the partition of unity."""
    if len(reference) != system.n_dd or len(approx) != system.n_dd:
        raise ConfigurationMismatchError(
            f"Expected {system.n_dd} fields per side, got {len(reference)} and {len(approx)}")
    grid = grid or background_grid(system, n_cells)
    v_ref, g_ref = evaluate_pou(system, reference, grid)
    v, g = evaluate_pou(system, approx, grid)
    denom = h1_norm_squared(v_ref, g_ref, grid.weights)
    if denom <= 0.0:
        raise Os2Error("Reference field has zero H1 norm")
    return float(np.sqrt(h1_norm_squared(v_ref - v, g_ref - g, grid.weights) / denom))


def compute_E_avg(hf_solutions: Sequence[HfCbSolution], rom_fields: Sequence[Sequence[np.ndarray]],
                  n_cells: int = 50) -> Tuple[float, List[float]]:
    """
    Mean relative H1 error of the ROM fields against the HF-CB fields, configuration by configuration.

    :return: (E_avg, per-configuration errors)
    :raises ConfigurationMismatchError: different numbers of configurations or components
    """
    if len(hf_solutions) != len(rom_fields):
        raise ConfigurationMismatchError(f"{len(hf_solutions)} HF solutions but {len(rom_fields)} ROM solutions")
    errors = [relative_h1_error(hf.system, hf.fields, fields, n_cells=n_cells)
              for hf, fields in zip(hf_solutions, rom_fields)]
    e_avg = float(np.mean(errors)) if errors else float("nan")
    logger.debug(f"[METRICS] E_avg={e_avg:.6e} over {len(errors)} configurations")
    return e_avg, errors


# =======================================
# PROJECTION ERROR
# =======================================

def project_local(arch, u: np.ndarray, n: int, m: int) -> np.ndarray:
    """Projection of a local field onto lift + span(Z_n, W_m) in the archetype inner product."""
    lift = arch.lift
    u_hom = u if lift is None else u - lift
    if n + m == 0:
        return np.zeros_like(u) if lift is None else np.array(lift, dtype=float)
    Z, W = arch.basis.truncated(n, m)
    V = np.hstack([Z, W])
    coeffs = sla.lstsq(arch.inner.gram(V), arch.inner.gram(V, u_hom[:, None])[:, 0])[0]
    return arch.field(V @ coeffs)


def projected_fields(solution: HfCbSolution, n: int, m: int) -> List[np.ndarray]:
    return [project_local(c.archetype, u, n, m) for c, u in zip(solution.system.components, solution.fields)]


def compute_E_avg_opt(hf_solutions: Sequence[HfCbSolution], n: int, m: int,
                      n_cells: int = 50) -> Tuple[float, List[float]]:
    """E_avg of the per-component projections of the HF-CB fields onto the reduced spaces."""
    return compute_E_avg(hf_solutions, [projected_fields(hf, n, m) for hf in hf_solutions], n_cells)


# =======================================
# REPORTS
# =======================================

@dataclass
class ErrorReport:
    """Accuracy and cost of one online variant over the test set."""
    n: int
    m: int
    solver: str
    quadrature: str
    objective: str
    errors: List[float] = field(default_factory=list)
    e_avg: float = float("nan")
    e_avg_opt: float = float("nan")
    iterations: List[int] = field(default_factory=list)
    final_objectives: List[float] = field(default_factory=list)
    wall_times: List[float] = field(default_factory=list)
    converged: List[bool] = field(default_factory=list)

    def __post_init__(self):
        if self.errors and min(self.errors) < 0.0:
            raise ValueError("Relative errors must be non-negative")

    @property
    def mean_wall_time(self) -> float:
        return float(np.mean(self.wall_times)) if self.wall_times else float("nan")

    def to_row(self) -> Dict[str, object]:
        return {
            "n": self.n,
            "m": self.m,
            "solver": self.solver,
            "quadrature": self.quadrature,
            "objective": self.objective,
            "E_avg": self.e_avg,
            "E_avg_opt": self.e_avg_opt,
            "mean_iterations": float(np.mean(self.iterations)) if self.iterations else float("nan"),
            "max_iterations": max(self.iterations) if self.iterations else 0,
            "all_converged": all(self.converged),
        }

    def timing_row(self) -> Dict[str, object]:
        return {"n": self.n, "m": self.m, "solver": self.solver, "quadrature": self.quadrature,
                "objective": self.objective, "mean_wall_time": self.mean_wall_time,
                "max_wall_time": max(self.wall_times) if self.wall_times else float("nan")}

    def to_dict(self) -> Dict[str, object]:
        data = self.to_row()
        data.update(errors=list(self.errors), iterations=list(self.iterations),
                    final_objectives=list(self.final_objectives), converged=list(self.converged))
        return data


@dataclass
class SpeedupRow:
    n_dd: int
    t_hf: float
    t_os2: float
    os2_iterations: int = 0

    @property
    def speedup(self) -> float:
        return self.t_hf / self.t_os2 if self.t_os2 > 0.0 else float("inf")

    def to_row(self) -> Dict[str, object]:
        return {"N_dd": self.n_dd, "t_hf": self.t_hf, "t_os2": self.t_os2, "speedup": self.speedup,
                "os2_iterations": self.os2_iterations}
