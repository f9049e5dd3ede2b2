# modules/validation_1d.py
"""
Closed-form oracles for two overlapping 1D model problems on (-1, 1) split into
(-1, delta) and (-delta, 1):

- poisson:  u'' = 2, u(-1) = u(1) = 1 (exact solution x^2)
- advdiff:  -u'' + gamma u' = 0, u(-1) = 0, u(1) = 1

The port values beta = (u_1(delta), u_2(-delta)) satisfy a 2x2 system A beta = F.
Alternating Schwarz is Gauss-Seidel on that system; the one-shot variant is
gradient descent on |A beta - F|^2 with the optimal fixed step. The discrete
cross-check runs the generic solvers on P2 discretizations of the same problems.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from modules.components import DIRICHLET_TAG, PORT_TAG, Archetype, deploy_system
from modules.config import SolverConfig
from modules.errors import ParameterBoxError
from modules.fe_core import FeSpace
from modules.hf_solvers import full_models
from modules.logger import logger
from modules.mesh import interval_mesh, subdivide
from modules.physics import advdiff_1d_form, poisson_1d_form
from modules.rom_online import (
    CoefficientState,
    assemble_jump_system,
    reference_port_weights,
    solve_gauss_newton,
    solve_schwarz,
)

PROBLEM_KINDS = ("poisson", "advdiff")
WINDOW = (5, 25)


@dataclass(frozen=True)
class OneDimProblem:
    kind: str
    delta: float
    gamma: float = 0.0

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise ValueError(f"Unknown 1D problem '{self.kind}' (expected one of {PROBLEM_KINDS})")
        if not 0.0 < self.delta < 1.0:
            raise ParameterBoxError(f"delta={self.delta} must lie in (0, 1)")
        if self.kind == "advdiff" and not self.gamma > 0.0:
            raise ParameterBoxError(f"gamma={self.gamma} must be positive for advdiff")

    @property
    def boundary_values(self) -> Tuple[float, float]:
        return (1.0, 1.0) if self.kind == "poisson" else (0.0, 1.0)

    @property
    def advection_constant(self) -> float:
        """c_gamma + d_gamma = gamma (e^gamma + 1) / (e^gamma - 1)."""
        g = self.gamma
        return g * (np.exp(g) + 1.0) / np.expm1(g)


# =======================================
# LOCAL SOLUTIONS
# =======================================

def local_solutions(p: OneDimProblem, beta) -> Tuple[Callable[[np.ndarray], np.ndarray], Callable[[np.ndarray], np.ndarray]]:
    """
    Exact local solutions: u_1 on (-1, delta) with u_1(delta) = beta_1 and
    u_2 on (-delta, 1) with u_2(-delta) = beta_2.

    :param beta: scalar (used on both sides) or pair (beta_1, beta_2)
    """
    b1, b2 = np.broadcast_to(np.asarray(beta, dtype=float), (2,))
    d = p.delta
    if p.kind == "poisson":
        def u1(x):
            x = np.asarray(x, dtype=float)
            return x ** 2 + (b1 - d ** 2) * (1.0 + x) / (1.0 + d)

        def u2(x):
            x = np.asarray(x, dtype=float)
            return x ** 2 + (b2 - d ** 2) * (1.0 - x) / (1.0 + d)
        return u1, u2

    g = p.gamma

    def u1(x):
        x = np.asarray(x, dtype=float)
        return b1 * (np.exp(g * x) - np.exp(-g)) / (np.exp(g * d) - np.exp(-g))

    def u2(x):
        x = np.asarray(x, dtype=float)
        return (b2 * (np.exp(g) - np.exp(g * x)) + np.exp(g * x) - np.exp(-g * d)) / (np.exp(g) - np.exp(-g * d))
    return u1, u2


# =======================================
# ITERATION SYSTEMS
# =======================================

@dataclass
class IterationSystem:
    """A beta = F with unit diagonal, and the affine maps of both iterations."""
    problem: OneDimProblem
    A: np.ndarray
    F: np.ndarray

    @property
    def P_os(self) -> np.ndarray:
        a12, a21 = self.A[0, 1], self.A[1, 0]
        return np.array([[0.0, -a12], [0.0, a21 * a12]])

    @property
    def F_os(self) -> np.ndarray:
        return np.array([self.F[0], self.F[1] - self.A[1, 0] * self.F[0]])

    @property
    def normal_eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.A.T @ self.A)

    @property
    def sigma(self) -> float:
        """Optimal fixed step 2 / (lambda_min + lambda_max) of A^T A."""
        lam = self.normal_eigenvalues
        return 2.0 / (lam[0] + lam[-1])

    @property
    def P_os2(self) -> np.ndarray:
        return np.eye(2) - self.sigma * self.A.T @ self.A

    @property
    def F_os2(self) -> np.ndarray:
        return self.sigma * self.A.T @ self.F

    @property
    def fixed_point(self) -> np.ndarray:
        return np.linalg.solve(self.A, self.F)

    def os_step(self, beta: np.ndarray) -> np.ndarray:
        return self.P_os @ beta + self.F_os

    def os2_step(self, beta: np.ndarray) -> np.ndarray:
        return self.P_os2 @ beta + self.F_os2

    @property
    def alpha_p(self) -> float:
        return float(np.linalg.svd(self.A, compute_uv=False)[-1])

    @property
    def gamma_p(self) -> float:
        return float(np.linalg.svd(self.A, compute_uv=False)[0])

    @property
    def cond(self) -> float:
        return float(np.linalg.cond(self.A))


def poisson_constants(delta: float) -> Tuple[float, float]:
    """(c_delta, d_delta) = ((1 - delta) / (1 + delta), 2 delta^3 / (1 + delta))."""
    return (1.0 - delta) / (1.0 + delta), 2.0 * delta ** 3 / (1.0 + delta)


def advdiff_constants(delta: float, gamma: float) -> Tuple[float, float, float]:
    """
    (a, b, f) with beta_2 = a beta_1 and beta_1 = b beta_2 + f, from the exact
    exponential local solutions.
    """
    g, d = gamma, delta
    a = (np.exp(-g * d) - np.exp(-g)) / (np.exp(g * d) - np.exp(-g))
    b = (np.exp(g) - np.exp(g * d)) / (np.exp(g) - np.exp(-g * d))
    f = (np.exp(g * d) - np.exp(-g * d)) / (np.exp(g) - np.exp(-g * d))
    return float(a), float(b), float(f)


def build_system(p: OneDimProblem) -> IterationSystem:
    if p.kind == "poisson":
        c, d = poisson_constants(p.delta)
        A = np.array([[1.0, -c], [-c, 1.0]])
        F = np.array([d, d])
    else:
        a, b, f = advdiff_constants(p.delta, p.gamma)
        A = np.array([[1.0, -b], [-a, 1.0]])
        F = np.array([f, 0.0])
    return IterationSystem(p, A, F)


# =======================================
# RATES
# =======================================

@dataclass
class SpectralRates:
    rho_os: float
    rho_os2: float
    cond: float


def spectral_radius(P: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(P))))


def spectral_rates(p: OneDimProblem) -> SpectralRates:
    system = build_system(p)
    return SpectralRates(spectral_radius(system.P_os), spectral_radius(system.P_os2), system.cond)


def asymptotic_rates(p: OneDimProblem) -> SpectralRates:
    """Small-delta expansions of the three rates."""
    d = p.delta
    if p.kind == "poisson":
        return SpectralRates(1.0 - 4.0 * d, 1.0 - 2.0 * d ** 2, 1.0 / d)
    k = p.advection_constant
    return SpectralRates(1.0 - 2.0 * k * d, 1.0 - 0.5 * (k * d) ** 2, 2.0 / (k * d))


def asymptotic_bounds(p: OneDimProblem) -> Tuple[float, float]:
    """Allowed gaps between the exact rho_os, rho_os2 and their expansions."""
    d = p.delta
    if p.kind == "poisson":
        return 8.0 * d ** 2, 8.0 * d ** 3
    k = p.advection_constant
    return 10.0 * (k * d) ** 2, 10.0 * (k * d) ** 3


def iterate(step: Callable[[np.ndarray], np.ndarray], beta0: np.ndarray, n: int) -> List[np.ndarray]:
    history = [np.asarray(beta0, dtype=float)]
    for _ in range(n):
        history.append(step(history[-1]))
    return history


def measured_contraction(history: Sequence[np.ndarray], target: np.ndarray, window: Tuple[int, int] = WINDOW) -> float:
    """
    Geometric mean of successive error ratios over the window of iterations,
    shortened when the error reaches round-off.
    """
    errors = np.array([np.linalg.norm(np.asarray(b) - target) for b in history])
    first, last = window
    last = min(last, len(errors) - 1)
    floor = 1e-13 * max(errors[0], 1e-300)
    while last > first and errors[last] <= floor:
        last -= 1
    if last <= first or errors[first] == 0.0:
        return float("nan")
    return float((errors[last] / errors[first]) ** (1.0 / (last - first)))


# =======================================
# DISCRETE CROSS-CHECK
# =======================================

def build_1d_archetypes(p: OneDimProblem, h: float, degree: int = 2) -> Tuple[Archetype, Archetype]:
    """P2 archetypes on (-1, delta) and (-delta, 1) with the Dirichlet data in their lifts."""
    d = p.delta
    left_value, right_value = p.boundary_values

    def factory(space: FeSpace, mu: np.ndarray, symmetric: bool, linear: bool):
        return poisson_1d_form(space) if p.kind == "poisson" else advdiff_1d_form(space, p.gamma)

    archetypes = []
    for label, breaks, dir_side, port_side, value in (
        ("left", (-1.0, d), "left", "right", left_value),
        ("right", (-d, 1.0), "right", "left", right_value),
    ):
        mesh = interval_mesh(subdivide(breaks, h), degree)
        mesh.tags[DIRICHLET_TAG] = mesh.tags[dir_side]
        mesh.tags[PORT_TAG] = mesh.tags[port_side]
        space = FeSpace(mesh, 1)
        dir_nodes = mesh.tag_nodes(DIRICHLET_TAG)
        space.constrain(dir_nodes)
        space.set_port(mesh.tag_nodes(PORT_TAG))
        lift = np.zeros(space.n_dofs)
        lift[dir_nodes] = value
        archetypes.append(Archetype(label, space, (), {}, factory, lift=lift, port_points_per_facet=1))
    return archetypes[0], archetypes[1]


@dataclass
class DiscreteCheck:
    problem: OneDimProblem
    h: float
    contraction_measured: float
    contraction_exact: float
    beta_converged: np.ndarray
    beta_exact: np.ndarray
    gn_iterations: int
    gn_step_norms: List[float]
    messages: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.messages

    @property
    def beta_error(self) -> float:
        return float(np.max(np.abs(self.beta_converged - self.beta_exact)))


def cross_check_discrete(p: OneDimProblem, h: float = 1e-3, iterations: int = WINDOW[1],
                         contraction_tol: float = 1e-3, beta_tol: Optional[float] = None) -> DiscreteCheck:
    """
    Runs alternating Schwarz and Gauss-Newton on full P2 local spaces and compares
    the measured contraction and the converged port values with the closed forms.
    """
    beta_tol = 1e-6 + 10.0 * h ** 2 if beta_tol is None else beta_tol
    cfg = SolverConfig()
    left, right = build_1d_archetypes(p, h)
    system = deploy_system([left, right], [[], []])
    coupled = full_models(system, cfg, linear=True)
    jump = assemble_jump_system(coupled, reference_port_weights(system))
    init = CoefficientState([np.zeros(m.n_alpha) for m in coupled.models], [np.zeros(m.n_beta) for m in coupled.models])

    gn_state, gn_report = solve_gauss_newton(coupled, jump, init, tol=1e-12, maxit=5, damping=False)
    beta_star = gn_state.beta
    _, os_report = solve_schwarz(coupled, jump, init, tol=0.0, maxit=iterations)
    measured = measured_contraction(os_report.beta_history, beta_star)

    oracle = build_system(p)
    check = DiscreteCheck(
        problem=p,
        h=h,
        contraction_measured=measured,
        contraction_exact=spectral_radius(oracle.P_os),
        beta_converged=beta_star,
        beta_exact=oracle.fixed_point,
        gn_iterations=gn_report.iterations,
        gn_step_norms=list(gn_report.step_norms),
    )
    if not abs(check.contraction_measured - check.contraction_exact) <= contraction_tol:
        check.messages.append(
            f"contraction {check.contraction_measured:.6g} vs exact {check.contraction_exact:.6g} (tol {contraction_tol:g})")
    if not check.beta_error <= beta_tol:
        check.messages.append(f"port values off by {check.beta_error:.3e} (tol {beta_tol:.1e})")
    if len(check.gn_step_norms) > 1 and check.gn_step_norms[1] > 1e-10 * max(1.0, float(np.linalg.norm(beta_star))):
        check.messages.append(f"Gauss-Newton second step {check.gn_step_norms[1]:.3e} is not negligible")
    level = logger.info if check.ok else logger.warning
    level(f"[1D] {p.kind} delta={p.delta:g} gamma={p.gamma:g} h={h:g}: contraction {measured:.6g} "
          f"(exact {check.contraction_exact:.6g}), beta error {check.beta_error:.3e}"
          + ("" if check.ok else f"; mismatch: {'; '.join(check.messages)}"))
    return check


# =======================================
# RATE TABLE
# =======================================

RATE_COLUMNS = [
    "kind", "delta", "gamma",
    "rho_os_exact", "rho_os_asym", "rho_os2_exact", "rho_os2_asym",
    "cond", "cond_asym", "alpha_p", "gamma_p",
    "rho_os_measured", "beta_error", "gn_iterations", "discrete_ok",
]


def rate_row(p: OneDimProblem, discrete: bool = False, h: float = 1e-3) -> Dict[str, object]:
    system = build_system(p)
    exact = spectral_rates(p)
    asym = asymptotic_rates(p)
    row: Dict[str, object] = {
        "kind": p.kind,
        "delta": p.delta,
        "gamma": p.gamma,
        "rho_os_exact": exact.rho_os,
        "rho_os_asym": asym.rho_os,
        "rho_os2_exact": exact.rho_os2,
        "rho_os2_asym": asym.rho_os2,
        "cond": exact.cond,
        "cond_asym": asym.cond,
        "alpha_p": system.alpha_p,
        "gamma_p": system.gamma_p,
        "rho_os_measured": "",
        "beta_error": "",
        "gn_iterations": "",
        "discrete_ok": "",
    }
    if discrete:
        check = cross_check_discrete(p, h)
        row.update(rho_os_measured=check.contraction_measured, beta_error=check.beta_error,
                   gn_iterations=check.gn_iterations, discrete_ok=check.ok)
    return row


def rate_table(deltas: Sequence[float], gammas: Sequence[float] = (), discrete: bool = False,
               h: float = 1e-3) -> List[Dict[str, object]]:
    """One poisson row per delta, then one advdiff row per (gamma, delta)."""
    problems = [OneDimProblem("poisson", d) for d in deltas]
    problems += [OneDimProblem("advdiff", d, g) for g in gammas for d in deltas]
    rows = [rate_row(p, discrete, h) for p in problems]
    logger.info(f"[1D] Rate table: {len(rows)} rows (discrete={discrete})")
    return rows
