# modules/hf_solvers.py
"""
High-fidelity reference solvers: the monolithic Newton solve on the global mesh,
and the component-based HF model (Gauss-Newton over full port traces with exact
port-to-bubble solves) that generates training and test data.
"""

import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from modules.components import (
    DIRICHLET_TAG,
    SYMMETRY_TAG,
    DeployedSystem,
    GlobalParameter,
    build_global_mesh,
)
from modules.config import GeometryConfig, SolverConfig
from modules.errors import InvertedElementError, LocalMapSingularError, NewtonDivergenceError
from modules.fe_core import FeSpace
from modules.logger import logger
from modules.mesh import Mesh
from modules.physics import LinearElasticForm, LoadSpec, MaterialField, NeoHookeanForm, VariationalForm
from modules.rom_online import (
    CoefficientState,
    CoupledModel,
    LocalModel,
    SolveReport,
    assemble_jump_system,
    reference_port_weights,
    solve_gauss_newton,
)


# =======================================
# NEWTON
# =======================================

@dataclass
class NewtonConfig:
    atol: float = 1e-12
    rtol: float = 1e-10
    maxit: int = 30
    backtrack_factor: float = 0.5
    max_backtracks: int = 20

    def __post_init__(self):
        if not (self.atol > 0 and self.rtol > 0):
            raise ValueError(f"Newton tolerances must be positive (atol={self.atol}, rtol={self.rtol})")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError(f"Backtracking factor must lie in (0, 1), got {self.backtrack_factor}")

    @classmethod
    def from_solver(cls, cfg: SolverConfig) -> "NewtonConfig":
        return cls(cfg.newton_atol, cfg.newton_rtol, cfg.newton_maxit, cfg.backtrack_factor, cfg.max_backtracks)


@dataclass
class NewtonResult:
    u: np.ndarray
    iterations: int
    history: List[float]


def newton_solve(form: VariationalForm, u0: np.ndarray, free: np.ndarray, cfg: NewtonConfig,
                 label: str = "monolithic") -> NewtonResult:
    """
    Newton on the free dofs with residual-norm backtracking; fixed dofs keep their u0 values.

    :raises NewtonDivergenceError: with the residual history
    """
    u = np.array(u0, dtype=float)
    r, K = form.residual_and_jacobian(u)
    norm = float(np.linalg.norm(r[free]))
    tol = cfg.atol + cfg.rtol * norm
    history = [norm]
    for it in range(1, cfg.maxit + 1):
        if norm <= tol:
            return NewtonResult(u, it - 1, history)
        try:
            du = splu(sp.csc_matrix(K[free][:, free])).solve(-r[free])
        except RuntimeError as e:
            logger.error(f"[HF] Singular tangent in {label}: {e}")
            raise NewtonDivergenceError(label, history) from e
        t = 1.0
        for _ in range(cfg.max_backtracks + 1):
            trial = u.copy()
            trial[free] += t * du
            try:
                r_new, K_new = form.residual_and_jacobian(trial)
                norm_new = float(np.linalg.norm(r_new[free]))
            except InvertedElementError:
                norm_new = np.inf
            if norm_new <= (1.0 - 1e-4 * t) * norm or norm_new <= tol:
                break
            t *= cfg.backtrack_factor
        else:
            raise NewtonDivergenceError(label, history)
        u, r, K, norm = trial, r_new, K_new, norm_new
        history.append(norm)
        logger.debug(f"[HF] {label} Newton it={it} |r|={norm:.3e} t={t:g}")
    if norm <= tol:
        return NewtonResult(u, cfg.maxit, history)
    raise NewtonDivergenceError(label, history)


# =======================================
# MONOLITHIC SOLVER
# =======================================

@dataclass
class MonolithicSolution:
    space: FeSpace
    u: np.ndarray
    iterations: int
    history: List[float]
    load_steps: int
    wall_time: float

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh


def benchmark_space(mesh: Mesh) -> FeSpace:
    """u = 0 on the Dirichlet facets, u . n = 0 on the vertical sides."""
    space = FeSpace(mesh, 2)
    space.constrain(mesh.tag_nodes(DIRICHLET_TAG))
    space.constrain(mesh.tag_nodes(SYMMETRY_TAG), components=[0])
    return space


def solve_monolithic(
    mesh: Mesh,
    material: MaterialField,
    load: LoadSpec,
    cfg: Optional[NewtonConfig] = None,
    load_steps: int = 4,
    linear: bool = False,
    symmetric_test_gradient: bool = False,
) -> MonolithicSolution:
    """
    Global Newton solve from zero displacement; falls back to load continuation in
    load_steps increments when plain Newton fails.
    """
    cfg = cfg or NewtonConfig()
    start = time.perf_counter()
    space = benchmark_space(mesh)
    cls = LinearElasticForm if linear else NeoHookeanForm
    form = cls(space, material, load, symmetric_test_gradient=symmetric_test_gradient)
    free = space.free_dofs
    u0 = np.zeros(space.n_dofs)
    try:
        result = newton_solve(form, u0, free, cfg)
        steps = 1
    except (NewtonDivergenceError, InvertedElementError) as e:
        logger.warning(f"[HF] Plain Newton failed ({e}); switching to {load_steps} load steps")
        u, iterations, history = u0, 0, []
        for k in range(1, load_steps + 1):
            step = newton_solve(form.with_load_scale(k / load_steps), u, free, cfg, f"monolithic load step {k}")
            u, iterations, history = step.u, iterations + step.iterations, history + step.history
        result = NewtonResult(u, iterations, history)
        steps = load_steps
    elapsed = time.perf_counter() - start
    logger.debug(f"[HF] Monolithic solve: {space.n_dofs} dofs, {result.iterations} Newton iterations, {elapsed:.3f}s")
    return MonolithicSolution(space, result.u, result.iterations, result.history, steps, elapsed)


def solve_benchmark_monolithic(geometry: GeometryConfig, parameter: GlobalParameter, h: float,
                               solver: Optional[SolverConfig] = None, degree: int = 2) -> MonolithicSolution:
    """Monolithic reference for one benchmark configuration."""
    solver = solver or SolverConfig()
    mesh = build_global_mesh(geometry, parameter.q_a, h, degree)
    material = MaterialField(parameter.E1, parameter.E2, parameter.E3, geometry.nu)
    return solve_monolithic(
        mesh, material, LoadSpec(s=parameter.s, top_scale=1.0), NewtonConfig.from_solver(solver),
        solver.load_steps, symmetric_test_gradient=solver.symmetric_test_gradient,
    )


# =======================================
# COMPONENT-BASED HIGH-FIDELITY MODEL
# =======================================

class FullLocalModel(LocalModel):
    """Local model with alpha = all bubble dofs and beta = all port dofs."""

    def __init__(self, component, cfg: Optional[SolverConfig] = None, linear: bool = False):
        super().__init__(component, cfg, linear)
        space = component.space
        self.bubble = space.bubble_dofs
        self.port = space.port_dofs
        self.n_dofs = space.n_dofs
        self.n_alpha, self.n_beta = len(self.bubble), len(self.port)
        self.lift = component.archetype.lift
        self._bubble_op = sp.csr_matrix(
            (np.ones(self.n_alpha), (self.bubble, np.arange(self.n_alpha))), shape=(self.n_dofs, self.n_alpha))
        self._port_op = sp.csr_matrix(
            (np.ones(self.n_beta), (self.port, np.arange(self.n_beta))), shape=(self.n_dofs, self.n_beta))

    @property
    def bubble_operator(self) -> sp.csr_matrix:
        return self._bubble_op

    @property
    def port_operator(self) -> sp.csr_matrix:
        return self._port_op

    def expand(self, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
        u = np.zeros(self.n_dofs) if self.lift is None else np.array(self.lift, dtype=float)
        u[self.bubble] = alpha
        u[self.port] = beta
        return u

    def residual(self, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
        return self.form.residual(self.expand(alpha, beta))[self.bubble]

    def linearize(self, alpha: np.ndarray, beta: np.ndarray):
        r, K = self.form.residual_and_jacobian(self.expand(alpha, beta))
        K_b = K[self.bubble]
        return r[self.bubble], K_b[:, self.bubble].tocsc(), K_b[:, self.port]

    def port_to_bubble_jacobian(self, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
        _, Ja, Jb = self.linearize(alpha, beta)
        try:
            return -splu(Ja).solve(Jb.toarray())
        except RuntimeError as e:
            raise LocalMapSingularError(self.index) from e


@dataclass
class HfCbSolution:
    system: DeployedSystem
    fields: List[np.ndarray]
    state: CoefficientState
    objective: float
    report: SolveReport
    local_residuals: List[float] = field(default_factory=list)

    @property
    def port_traces(self) -> List[np.ndarray]:
        return list(self.state.betas)

    @property
    def bubble_parts(self) -> List[np.ndarray]:
        return list(self.state.alphas)


def full_models(system: DeployedSystem, cfg: Optional[SolverConfig] = None, linear: bool = False,
                workers: int = 1) -> CoupledModel:
    return CoupledModel(system, [FullLocalModel(c, cfg, linear) for c in system.components], workers)


def solve_hf_cb(
    system: DeployedSystem,
    cfg: Optional[SolverConfig] = None,
    init: Optional[CoefficientState] = None,
    tol: Optional[float] = None,
    linear: bool = False,
    workers: int = 1,
) -> HfCbSolution:
    """
    Minimizes the HF jump functional over the full port traces subject to exact local solves.

    :raises NewtonDivergenceError: a local solve failed (names the component)
    """
    cfg = cfg or SolverConfig()
    coupled = full_models(system, cfg, linear, workers)
    jump = assemble_jump_system(coupled, reference_port_weights(system))
    if init is None:
        init = CoefficientState([np.zeros(m.n_alpha) for m in coupled.models], [np.zeros(m.n_beta) for m in coupled.models])
    state, report = solve_gauss_newton(
        coupled, jump, init, tol if tol is not None else cfg.tol, cfg.maxit, cfg.use_damping, cfg.max_halvings,
    )
    fields = coupled.fields(state)
    local = [float(np.linalg.norm(m.residual(a, b))) for m, a, b in zip(coupled.models, state.alphas, state.betas)]
    objective = jump.objective(state.alphas, state.betas)
    logger.debug(
        f"[HF] HF-CB: N_dd={system.n_dd}, {report.iterations} GN iterations, objective {objective:.3e}, "
        f"max local residual {max(local):.3e}"
    )
    return HfCbSolution(system, fields, state, objective, report, local)
