# modules/rom_online.py
"""
Online OS2 solver.

Each deployed component carries a local model: a residual R(alpha, beta) in the
bubble test space and its partial Jacobians. The port-to-bubble map alpha = F(beta)
solves R = 0 by Newton. Components are coupled only through the jump residual

    r(beta) = sum_i P_i F_i(beta_i) + Q_i beta_i + c,

whose half squared norm is minimized by Gauss-Newton, L-BFGS or overlapping
Schwarz sweeps.
"""

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.sparse.linalg import splu

from modules.components import DeployedSystem
from modules.config import SolverConfig
from modules.errors import InvertedElementError, LineSearchError, LocalMapSingularError, NewtonDivergenceError, Os2Error
from modules.fe_core import evaluation_matrix
from modules.logger import logger
from modules.task_manager import run_parallel

RANK_RTOL = 1e-12
STEP_ATOL = 1e-13
QN_PENALTY = 1e6
QN_MAX_LINE_SEARCH = 40
LOCAL_FAILURES = (NewtonDivergenceError, InvertedElementError, LocalMapSingularError)


def _dense(a) -> np.ndarray:
    return a.toarray() if sp.issparse(a) else np.asarray(a)


# =======================================
# LOCAL MODELS
# =======================================

class LocalModel:
    """
    Local problem of one deployed component in (bubble, port) coordinates.

    Subclasses provide expand(), linearize() and the operators mapping
    coefficients to full dof vectors.
    """

    def __init__(self, component, cfg: Optional[SolverConfig] = None, linear: bool = False):
        cfg = cfg or SolverConfig()
        self.component = component
        self.index = component.index
        self.form = component.form(cfg.symmetric_test_gradient, linear)
        self.rtol = cfg.local_rtol
        self.atol = cfg.newton_atol
        self.maxit = cfg.local_maxit
        self.backtrack_factor = cfg.backtrack_factor
        self.max_backtracks = cfg.max_backtracks
        self._scale: Optional[float] = None

    # --- to be provided ---
    n_alpha: int
    n_beta: int

    @property
    def bubble_operator(self):
        raise NotImplementedError

    @property
    def port_operator(self):
        raise NotImplementedError

    def expand(self, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def residual(self, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def linearize(self, alpha: np.ndarray, beta: np.ndarray):
        """(R, dR/dalpha, dR/dbeta) at (alpha, beta)."""
        raise NotImplementedError

    # --- shared ---
    def residual_scale(self) -> float:
        """Norm of the residual at zero coefficients (load scale)."""
        if self._scale is None:
            self._scale = float(np.linalg.norm(self.residual(np.zeros(self.n_alpha), np.zeros(self.n_beta))))
        return self._scale

    def _solve(self, J, rhs: np.ndarray) -> np.ndarray:
        try:
            if sp.issparse(J):
                return splu(sp.csc_matrix(J)).solve(np.asarray(rhs))
            return np.linalg.solve(J, rhs)
        except (RuntimeError, np.linalg.LinAlgError) as e:
            raise LocalMapSingularError(self.index) from e

    def port_to_bubble(self, beta: np.ndarray, alpha_guess: Optional[np.ndarray] = None) -> Tuple[np.ndarray, int]:
        """
        Newton solve of R(alpha, beta) = 0 with residual backtracking.

        :return: (alpha, Newton iterations)
        :raises LocalMapSingularError: singular dR/dalpha
        :raises NewtonDivergenceError: no acceptable step after max backtracks or maxit
        """
        alpha = np.zeros(self.n_alpha) if alpha_guess is None else np.array(alpha_guess, dtype=float)
        try:
            R, Ja, _ = self.linearize(alpha, beta)
        except InvertedElementError:
            if alpha_guess is None:
                raise
            # warm start inverts elements under the new port values: cold start
            alpha = np.zeros(self.n_alpha)
            R, Ja, _ = self.linearize(alpha, beta)
        norm = float(np.linalg.norm(R))
        tol = self.atol + self.rtol * max(norm, self.residual_scale())
        history = [norm]
        for it in range(1, self.maxit + 1):
            if norm <= tol:
                return alpha, it - 1
            step = -self._solve(Ja, R)
            t = 1.0
            for _ in range(self.max_backtracks + 1):
                trial = alpha + t * step
                try:
                    R_new, Ja_new, _ = self.linearize(trial, beta)
                    norm_new = float(np.linalg.norm(R_new))
                except InvertedElementError:
                    norm_new = np.inf
                if norm_new <= (1.0 - 1e-4 * t) * norm or norm_new <= tol:
                    break
                t *= self.backtrack_factor
            else:
                raise NewtonDivergenceError(f"component {self.index}", history)
            alpha, R, Ja, norm = trial, R_new, Ja_new, norm_new
            history.append(norm)
            if t * np.linalg.norm(step) <= STEP_ATOL * max(1.0, np.linalg.norm(alpha)):
                return alpha, it
        if norm <= tol:
            return alpha, self.maxit
        raise NewtonDivergenceError(f"component {self.index}", history)

    def port_to_bubble_jacobian(self, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
        """dF/dbeta = -(dR/dalpha)^-1 dR/dbeta, dense (n_alpha, n_beta)."""
        _, Ja, Jb = self.linearize(alpha, beta)
        return -np.asarray(self._solve(Ja, _dense(Jb)))


class ReducedLocalModel(LocalModel):
    """
    Reduced local model: u = lift + Z alpha + W beta, residual tested against Z,
    integrated with non-negative element weights (all ones for HF quadrature).
    """

    def __init__(self, component, Z: np.ndarray, W: np.ndarray, weights: Optional[np.ndarray] = None,
                 cfg: Optional[SolverConfig] = None, linear: bool = False):
        super().__init__(component, cfg, linear)
        self.Z = np.asarray(Z, dtype=float)
        self.W = np.asarray(W, dtype=float)
        self.n_alpha, self.n_beta = self.Z.shape[1], self.W.shape[1]
        n_el = self.form.n_elements
        weights = np.ones(n_el) if weights is None else np.asarray(weights, dtype=float)
        self.elements, self.rho = self.form._active(weights)
        if self.rho is None:
            self.rho = np.ones(len(self.elements))
        edofs = self.form.element_dofs[self.elements]
        self.Z_el = self.Z[edofs]
        self.W_el = self.W[edofs]
        lift = component.archetype.lift
        self.lift = lift
        self.lift_el = None if lift is None else lift[edofs]

    @property
    def bubble_operator(self) -> np.ndarray:
        return self.Z

    @property
    def port_operator(self) -> np.ndarray:
        return self.W

    @property
    def n_support(self) -> int:
        return len(self.elements)

    def expand(self, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
        u = self.Z @ alpha + self.W @ beta
        return u if self.lift is None else u + self.lift

    def _element_fields(self, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
        u = np.einsum("eda,a->ed", self.Z_el, alpha) + np.einsum("edb,b->ed", self.W_el, beta)
        return u if self.lift_el is None else u + self.lift_el

    def residual(self, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
        r = self.form.element_residuals(self._element_fields(alpha, beta), self.elements)
        return np.einsum("e,eda,ed->a", self.rho, self.Z_el, r)

    def element_projections(self, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
        """Unweighted per-element reduced residuals Z_k^T r_k, shape (n_alpha, n_support)."""
        r = self.form.element_residuals(self._element_fields(alpha, beta), self.elements)
        return np.einsum("eda,ed->ae", self.Z_el, r)

    def linearize(self, alpha: np.ndarray, beta: np.ndarray):
        r, K = self.form.element_residuals_and_tangents(self._element_fields(alpha, beta), self.elements)
        R = np.einsum("e,eda,ed->a", self.rho, self.Z_el, r)
        KZ = np.einsum("edf,efa->eda", K, self.Z_el)
        Ja = np.einsum("e,edb,eda->ba", self.rho, self.Z_el, KZ)
        Jb = np.einsum("e,eda,edf,efb->ab", self.rho, self.Z_el, K, self.W_el, optimize=True)
        return R, Ja, Jb


def port_to_bubble(model: LocalModel, beta: np.ndarray, alpha_guess: Optional[np.ndarray] = None) -> np.ndarray:
    return model.port_to_bubble(beta, alpha_guess)[0]


def port_to_bubble_jacobian(model: LocalModel, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    return model.port_to_bubble_jacobian(alpha, beta)


# =======================================
# COUPLED STATE
# =======================================

@dataclass
class CoefficientState:
    alphas: List[np.ndarray]
    betas: List[np.ndarray]

    @property
    def alpha(self) -> np.ndarray:
        return np.concatenate(self.alphas) if self.alphas else np.zeros(0)

    @property
    def beta(self) -> np.ndarray:
        return np.concatenate(self.betas) if self.betas else np.zeros(0)

    def copy(self) -> "CoefficientState":
        return CoefficientState([a.copy() for a in self.alphas], [b.copy() for b in self.betas])


@dataclass
class SolveReport:
    solver: str
    iterations: int = 0
    objective_history: List[float] = field(default_factory=list)
    step_norms: List[float] = field(default_factory=list)
    local_newton_iterations: List[List[int]] = field(default_factory=list)
    damping_halvings: List[int] = field(default_factory=list)
    beta_history: List[np.ndarray] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0

    @property
    def final_objective(self) -> float:
        return self.objective_history[-1] if self.objective_history else float("nan")

    def to_dict(self) -> Dict[str, object]:
        return {
            "solver": self.solver,
            "iterations": self.iterations,
            "converged": self.converged,
            "final_objective": self.final_objective,
            "objective_history": list(self.objective_history),
            "step_norms": list(self.step_norms),
            "local_newton_iterations": [list(map(int, c)) for c in self.local_newton_iterations],
            "damping_halvings": list(self.damping_halvings),
            "warnings": list(self.warnings),
            "wall_time": self.wall_time,
        }


class CoupledModel:
    """Deployed system with one local model per component."""

    def __init__(self, system: DeployedSystem, models: Sequence[LocalModel], workers: int = 1):
        if len(models) != system.n_dd:
            raise ValueError(f"Expected {system.n_dd} local models, got {len(models)}")
        self.system = system
        self.models = list(models)
        self.workers = workers

    @property
    def alpha_sizes(self) -> List[int]:
        return [m.n_alpha for m in self.models]

    @property
    def beta_sizes(self) -> List[int]:
        return [m.n_beta for m in self.models]

    def split_beta(self, beta: np.ndarray) -> List[np.ndarray]:
        offsets = np.cumsum([0] + self.beta_sizes)
        return [beta[offsets[k]:offsets[k + 1]].copy() for k in range(len(self.models))]

    def solve_locals(self, betas: Sequence[np.ndarray], guesses: Sequence[Optional[np.ndarray]]):
        """alpha_i = F_i(beta_i) for all components; results ordered by component index."""
        jobs = list(zip(self.models, betas, guesses))
        results = run_parallel(lambda job: job[0].port_to_bubble(job[1], job[2]), jobs, self.workers, "local-solve")
        return [r[0] for r in results], [r[1] for r in results]

    def local_jacobians(self, alphas: Sequence[np.ndarray], betas: Sequence[np.ndarray]) -> List[np.ndarray]:
        jobs = list(zip(self.models, alphas, betas))
        return run_parallel(lambda job: job[0].port_to_bubble_jacobian(job[1], job[2]), jobs, self.workers, "local-jac")

    def block_jacobian(self, alphas, betas) -> np.ndarray:
        """Block-diagonal dF/dbeta with one (n_i, m_i) block per component."""
        return sla.block_diag(*self.local_jacobians(alphas, betas))

    def fields(self, state: CoefficientState) -> List[np.ndarray]:
        return [m.expand(a, b) for m, a, b in zip(self.models, state.alphas, state.betas)]


# =======================================
# JUMP SYSTEM
# =======================================

@dataclass
class JumpOperator:
    """
    Sparse evaluation of weighted jumps: r = sum_i B_i u_i, one row per
    (component i, port point q, owner j, state component c).
    """
    blocks: List[sp.csr_matrix]
    row_component: np.ndarray
    row_point: np.ndarray
    row_neighbor: np.ndarray
    row_dim: np.ndarray

    @property
    def n_rows(self) -> int:
        return len(self.row_component)


def assemble_jump_operator(system: DeployedSystem, port_weights: Sequence[np.ndarray],
                           include_jacobian: bool = True) -> JumpOperator:
    """
    Rows are scaled by sqrt(rho_q J_q) so that half the squared norm of r equals the
    weighted jump functional; points with zero weight produce no rows.

    :param port_weights: one weight vector per component over its reference port points
    :param include_jacobian: multiply the weights by the boundary measure ratio J^bnd
    :raises OwnershipError: via instantiate, never here
    """
    D = system[0].space.n_components
    triplets = [([], [], []) for _ in range(system.n_dd)]
    meta = {"component": [], "point": [], "neighbor": [], "dim": []}
    row0 = 0
    for i, comp in enumerate(system.components):
        rho = np.asarray(port_weights[i], dtype=float)
        if len(rho) != len(comp.port_points):
            raise ValueError(f"Component {i}: expected {len(comp.port_points)} port weights, got {len(rho)}")
        if np.any(rho < 0.0):
            raise ValueError(f"Component {i}: negative port weights")
        scale = rho * comp.port_jacobian if include_jacobian else rho.copy()
        pairs = [(q, j) for q in np.flatnonzero(rho > 0.0) for j in system.owners[i][q]]
        if not pairs:
            continue
        qs = np.array([p[0] for p in pairs], dtype=np.int64)
        js = np.array([p[1] for p in pairs], dtype=np.int64)
        k = len(pairs)
        rows = row0 + np.arange(k * D)
        s = np.repeat(np.sqrt(scale[qs]), D)

        bq = comp.archetype.port_quadrature
        E_own = evaluation_matrix(comp.space, bq.elements[qs], bq.local[qs]).tocoo()
        triplets[i][0].append(rows[E_own.row])
        triplets[i][1].append(E_own.col)
        triplets[i][2].append(s[E_own.row] * E_own.data)

        for j in np.unique(js):
            sel = np.flatnonzero(js == j)
            nbr = system[j]
            elements, local = nbr.mesh.locate(comp.port_points[qs[sel]])
            E = evaluation_matrix(nbr.space, elements, local).tocoo()
            pair_rows = (sel[:, None] * D + np.arange(D)[None, :]).ravel()
            triplets[j][0].append(rows[pair_rows[E.row]])
            triplets[j][1].append(E.col)
            triplets[j][2].append(-s[pair_rows[E.row]] * E.data)

        meta["component"].append(np.full(k * D, i))
        meta["point"].append(np.repeat(qs, D))
        meta["neighbor"].append(np.repeat(js, D))
        meta["dim"].append(np.tile(np.arange(D), k))
        row0 += k * D

    blocks = []
    for j, (r, c, v) in enumerate(triplets):
        n_dofs = system[j].space.n_dofs
        if r:
            blocks.append(sp.coo_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
                                        shape=(row0, n_dofs)).tocsr())
        else:
            blocks.append(sp.csr_matrix((row0, n_dofs)))
    cat = lambda key: np.concatenate(meta[key]) if meta[key] else np.zeros(0, dtype=np.int64)
    return JumpOperator(blocks, cat("component"), cat("point"), cat("neighbor"), cat("dim"))


@dataclass
class JumpSystem:
    """r(alpha, beta) = sum_i P_i alpha_i + Q_i beta_i + c."""
    P: List[object]
    Q: List[object]
    offset: np.ndarray
    operator: JumpOperator

    @property
    def n_rows(self) -> int:
        return len(self.offset)

    def residual(self, alphas: Sequence[np.ndarray], betas: Sequence[np.ndarray]) -> np.ndarray:
        r = self.offset.copy()
        for P, Q, a, b in zip(self.P, self.Q, alphas, betas):
            r += P @ a + Q @ b
        return r

    def objective(self, alphas, betas) -> float:
        r = self.residual(alphas, betas)
        return 0.5 * float(r @ r)

    def gradient(self, jacobians: Sequence[np.ndarray]) -> np.ndarray:
        """dr/dbeta = [P_1 J_F1 + Q_1, ..., P_N J_FN]."""
        return np.hstack([_dense(P @ J) + _dense(Q) for P, Q, J in zip(self.P, self.Q, jacobians)])

    def restrict_rows(self, component: int) -> np.ndarray:
        return np.flatnonzero(self.operator.row_component == component)


def assemble_jump_system(coupled: CoupledModel, port_weights: Sequence[np.ndarray],
                         include_jacobian: bool = True) -> JumpSystem:
    """P_i = B_i (bubble operator), Q_i = B_i (port operator), c = sum_i B_i lift_i."""
    op = assemble_jump_operator(coupled.system, port_weights, include_jacobian)
    P, Q = [], []
    offset = np.zeros(op.n_rows)
    for B, model in zip(op.blocks, coupled.models):
        P.append(B @ model.bubble_operator)
        Q.append(B @ model.port_operator)
        lift = model.component.archetype.lift
        if lift is not None:
            offset += B @ lift
    logger.debug(f"[ROM] Jump system: {op.n_rows} rows, N={sum(coupled.alpha_sizes)}, M={sum(coupled.beta_sizes)}")
    return JumpSystem(P, Q, offset, op)


def reference_port_weights(system: DeployedSystem) -> List[np.ndarray]:
    """High-fidelity port weights: the reference facet quadrature of each archetype."""
    return [c.archetype.port_quadrature.weights.copy() for c in system.components]


# =======================================
# SOLVERS
# =======================================

def _least_squares_step(G: np.ndarray, r: np.ndarray, report: SolveReport) -> np.ndarray:
    """Minimum-norm solution of G s = r: pivoted QR, SVD fallback when rank deficient."""
    if G.shape[1] == 0:
        return np.zeros(0)
    Qm, R, piv = sla.qr(G, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if G.shape[0] >= G.shape[1] and diag.size and diag[-1] > RANK_RTOL * diag[0]:
        s = np.empty(G.shape[1])
        s[piv] = sla.solve_triangular(R, Qm.T @ r)
        return s
    msg = f"rank-deficient Gauss-Newton matrix ({G.shape[0]}x{G.shape[1]}); truncated SVD used"
    if msg not in report.warnings:
        report.warnings.append(msg)
        logger.warning(f"[GN] {msg}")
    return sla.lstsq(G, r, cond=RANK_RTOL)[0]


def _evaluate(coupled: CoupledModel, jump: JumpSystem, betas, guesses):
    alphas, counts = coupled.solve_locals(betas, guesses)
    r = jump.residual(alphas, betas)
    return alphas, counts, r, 0.5 * float(r @ r)


def solve_gauss_newton(
    coupled: CoupledModel,
    jump: JumpSystem,
    init: CoefficientState,
    tol: float = 1e-6,
    maxit: int = 100,
    damping: bool = True,
    max_halvings: int = 10,
) -> Tuple[CoefficientState, SolveReport]:
    """
    Gauss-Newton on the port coefficients with warm-started local solves.
    Stops when |beta_new - beta| <= tol |beta|; with damping, steps that increase the
    objective are halved up to max_halvings times.
    """
    report = SolveReport("gn")
    start = time.perf_counter()
    betas = [b.copy() for b in init.betas]
    alphas, counts, r, f = _evaluate(coupled, jump, betas, init.alphas)
    report.objective_history.append(f)
    report.local_newton_iterations.append(counts)

    for it in range(1, maxit + 1):
        G = jump.gradient(coupled.local_jacobians(alphas, betas))
        step = coupled.split_beta(_least_squares_step(G, r, report))
        beta_norm = float(np.linalg.norm(np.concatenate(betas))) if betas else 0.0

        t, halvings = 1.0, 0
        while True:
            trial = [b - t * s for b, s in zip(betas, step)]
            try:
                out = _evaluate(coupled, jump, trial, alphas)
            except LOCAL_FAILURES:
                if not damping:
                    raise
                out = None
            if not damping or (out is not None and out[3] <= f):
                break
            if halvings >= max_halvings:
                break
            t *= 0.5
            halvings += 1

        report.iterations = it
        if out is None or (damping and out[3] > f):
            # a rejected step below the stopping tolerance means beta is already stationary
            full_step = float(np.linalg.norm(np.concatenate(step))) if step else 0.0
            if full_step <= tol * beta_norm:
                report.converged = True
                break
            report.warnings.append(f"damping exhausted at iteration {it}; stopping with the last accepted iterate")
            logger.warning(f"[GN] Damping exhausted at iteration {it} (objective {f:.6e})")
            break

        step_norm = t * float(np.linalg.norm(np.concatenate(step))) if step else 0.0
        betas = trial
        alphas, counts, r, f = out
        report.objective_history.append(f)
        report.step_norms.append(step_norm)
        report.local_newton_iterations.append(counts)
        report.damping_halvings.append(halvings)
        logger.debug(f"[GN] it={it} objective={f:.6e} step={step_norm:.3e} halvings={halvings}")
        if step_norm <= tol * beta_norm:
            report.converged = True
            break

    report.wall_time = time.perf_counter() - start
    logger.debug(f"[GN] {report.iterations} iterations, objective {report.final_objective:.6e}, converged={report.converged}")
    return CoefficientState(alphas, betas), report


def solve_quasi_newton(
    coupled: CoupledModel,
    jump: JumpSystem,
    init: CoefficientState,
    tol: float = 1e-6,
    maxit: int = 100,
    memory: int = 10,
) -> Tuple[CoefficientState, SolveReport]:
    """
    L-BFGS on f(beta) = 1/2 |r(beta)|^2 with gradient (P J_F + Q)^T r and the
    relative-step stopping rule.

    :raises LineSearchError: when the line search fails away from a stationary point
    """
    report = SolveReport("qn")
    start = time.perf_counter()
    cache = {"alphas": [a.copy() for a in init.alphas], "penalty": None, "failures": 0}

    def fun(x: np.ndarray):
        betas = coupled.split_beta(x)
        try:
            alphas, counts, r, f = _evaluate(coupled, jump, betas, cache["alphas"])
        except LOCAL_FAILURES as e:
            if cache["penalty"] is None:
                raise
            # rejected trial point; the last good alphas stay the warm start
            cache["failures"] += 1
            logger.debug(f"[QN] Local solve failed at a trial point ({type(e).__name__}); rejected")
            return cache["penalty"], np.zeros_like(x)
        cache.update(alphas=alphas, x=x.copy(), counts=counts)
        G = jump.gradient(coupled.local_jacobians(alphas, betas))
        return f, G.T @ r

    x0 = init.beta
    f0, g0 = fun(x0)
    cache["penalty"] = QN_PENALTY * max(f0, 1.0)
    report.objective_history.append(f0)
    report.local_newton_iterations.append(cache["counts"])
    prev = {"x": x0.copy()}

    def callback(intermediate_result):
        x = intermediate_result.x
        step = float(np.linalg.norm(x - prev["x"]))
        scale = float(np.linalg.norm(prev["x"]))
        prev["x"] = x.copy()
        report.iterations += 1
        report.objective_history.append(float(intermediate_result.fun))
        report.step_norms.append(step)
        logger.debug(f"[QN] it={report.iterations} objective={intermediate_result.fun:.6e} step={step:.3e}")
        if step <= tol * scale:
            report.converged = True
            raise StopIteration

    result = minimize(
        fun, x0, jac=True, method="L-BFGS-B", callback=callback,
        options={"maxcor": memory, "maxiter": maxit, "ftol": 0.0, "gtol": 1e-14, "maxls": QN_MAX_LINE_SEARCH},
    )
    if cache["failures"]:
        report.warnings.append(f"{cache['failures']} trial points rejected after failed local solves")
        logger.debug(f"[QN] {cache['failures']} trial points rejected after failed local solves")
    if report.iterations == 0 and result.nit == 0:
        report.converged = True
    message = str(result.message)
    if "ABNORMAL" in message.upper() and not report.converged:
        _, g = fun(result.x)
        if np.linalg.norm(g) > np.sqrt(np.finfo(float).eps) * max(1.0, float(np.linalg.norm(g0))):
            raise LineSearchError(f"L-BFGS line search failed: {message}")
        report.converged = True
        report.warnings.append(f"line search stopped at a stationary point: {message}")

    betas = coupled.split_beta(np.asarray(result.x))
    alphas, counts, r, f = _evaluate(coupled, jump, betas, cache["alphas"])
    if not report.objective_history or report.objective_history[-1] != f:
        report.objective_history.append(f)
    report.local_newton_iterations.append(counts)
    report.wall_time = time.perf_counter() - start
    logger.debug(f"[QN] {report.iterations} iterations, objective {f:.6e}: {message}")
    return CoefficientState(alphas, betas), report


def solve_schwarz(
    coupled: CoupledModel,
    jump: JumpSystem,
    init: CoefficientState,
    tol: float = 1e-6,
    maxit: int = 100,
) -> Tuple[CoefficientState, SolveReport]:
    """
    Multiplicative overlapping Schwarz: components in index order fit their own port
    coefficients to the frozen neighbors on their own jump rows, then update their bubbles.
    """
    report = SolveReport("os")
    start = time.perf_counter()
    alphas = [a.copy() for a in init.alphas]
    betas = [b.copy() for b in init.betas]
    alphas, counts = coupled.solve_locals(betas, alphas)
    report.objective_history.append(jump.objective(alphas, betas))
    report.local_newton_iterations.append(counts)
    report.beta_history.append(np.concatenate(betas))
    own_rows = [jump.restrict_rows(i) for i in range(len(coupled.models))]
    Q_own = [_dense(jump.Q[i][rows]) for i, rows in enumerate(own_rows)]

    for it in range(1, maxit + 1):
        beta_old = np.concatenate(betas)
        counts = []
        for i, model in enumerate(coupled.models):
            rows = own_rows[i]
            if len(rows) == 0:
                counts.append(0)
                continue
            r = jump.residual(alphas, betas)[rows] - Q_own[i] @ betas[i]
            betas[i] = -sla.lstsq(Q_own[i], r, cond=RANK_RTOL)[0]
            alphas[i], n_newton = model.port_to_bubble(betas[i], alphas[i])
            counts.append(n_newton)
        beta_new = np.concatenate(betas)
        step = float(np.linalg.norm(beta_new - beta_old))
        report.iterations = it
        report.objective_history.append(jump.objective(alphas, betas))
        report.step_norms.append(step)
        report.local_newton_iterations.append(counts)
        report.beta_history.append(beta_new)
        logger.debug(f"[OS] it={it} objective={report.objective_history[-1]:.6e} step={step:.3e}")
        if step <= tol * float(np.linalg.norm(beta_old)):
            report.converged = True
            break

    report.wall_time = time.perf_counter() - start
    return CoefficientState(alphas, betas), report


SOLVERS = {"gn": solve_gauss_newton, "qn": solve_quasi_newton, "os": solve_schwarz}


def run_solver(name: str, coupled: CoupledModel, jump: JumpSystem, init: CoefficientState,
               cfg: SolverConfig) -> Tuple[CoefficientState, SolveReport]:
    """Dispatches one online solver with its configured options."""
    if name == "gn":
        return solve_gauss_newton(coupled, jump, init, cfg.tol, cfg.maxit, cfg.use_damping, cfg.max_halvings)
    if name == "qn":
        return solve_quasi_newton(coupled, jump, init, cfg.tol, cfg.maxit, cfg.qn_memory)
    if name == "os":
        return solve_schwarz(coupled, jump, init, cfg.tol, cfg.maxit)
    raise ValueError(f"Unknown solver '{name}' (expected one of {sorted(SOLVERS)})")


# =======================================
# REDUCED SYSTEMS
# =======================================

def build_reduced_models(system: DeployedSystem, n: int, m: int, quadrature: str = "hfq",
                         cfg: Optional[SolverConfig] = None, linear: bool = False,
                         workers: int = 1) -> CoupledModel:
    """
    Reduced local models from the archetype bases (leading n bubble, m port modes).

    :param quadrature: "hfq" (all elements) or "eq" (sparse element weights)
    """
    models = []
    for comp in system.components:
        arch = comp.archetype
        if arch.basis is None:
            raise Os2Error(f"Archetype '{arch.label}' has no reduced basis")
        Z, W = arch.basis.truncated(n, m)
        weights = None
        if quadrature == "eq":
            weights = arch.element_weights.get((n, m))
            if weights is None:
                raise Os2Error(f"Archetype '{arch.label}' has no element EQ weights for (n, m)=({n}, {m})")
        elif quadrature != "hfq":
            raise ValueError(f"Unknown quadrature mode '{quadrature}'")
        models.append(ReducedLocalModel(comp, Z, W, weights, cfg, linear))
    return CoupledModel(system, models, workers)


def objective_port_weights(system: DeployedSystem, objective: str, n: int, m: int) -> Tuple[List[np.ndarray], bool]:
    """
    Port weights and Jacobian flag for one objective mode.

    hfq: reference quadrature; eq: sparse port EQ weights; eim: unit weights at
    the EIM points without the boundary measure factor.
    """
    weights = []
    for comp in system.components:
        arch = comp.archetype
        if objective == "hfq":
            weights.append(arch.port_quadrature.weights.copy())
        elif objective == "eq":
            w = arch.port_weights.get((n, m))
            if w is None:
                raise Os2Error(f"Archetype '{arch.label}' has no port EQ weights for (n, m)=({n}, {m})")
            weights.append(w)
        elif objective == "eim":
            points = arch.eim_points.get(m)
            if points is None:
                raise Os2Error(f"Archetype '{arch.label}' has no EIM points for m={m}")
            w = np.zeros(len(arch.port_quadrature))
            w[points] = 1.0
            weights.append(w)
        else:
            raise ValueError(f"Unknown objective mode '{objective}'")
    return weights, objective != "eim"


def initial_state(coupled: CoupledModel) -> CoefficientState:
    """Per-archetype sample means of the training coefficients (zeros when absent)."""
    alphas, betas = [], []
    for model in coupled.models:
        means = model.component.archetype.coefficient_means
        if means is None:
            alphas.append(np.zeros(model.n_alpha))
            betas.append(np.zeros(model.n_beta))
        else:
            alphas.append(np.array(means[0][:model.n_alpha], dtype=float))
            betas.append(np.array(means[1][:model.n_beta], dtype=float))
    return CoefficientState(alphas, betas)
