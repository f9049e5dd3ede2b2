# modules/hyper_reduction.py
"""
Hyper-reduction: sparse non-negative quadrature weights for the local residuals
(element EQ) and for the jump objective (port EQ), greedy vector EIM point
selection, and the Lawson-Hanson NNLS solver behind the EQ problems.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from modules.components import Archetype, ArchetypeLibrary, GlobalParameter, deploy, instantiate
from modules.config import SolverConfig
from modules.errors import EimRankError
from modules.fe_core import evaluation_matrix
from modules.logger import logger
from modules.rom_online import (
    CoupledModel,
    JumpSystem,
    ReducedLocalModel,
    assemble_jump_operator,
    assemble_jump_system,
    objective_port_weights,
)
from modules.task_manager import run_parallel
from modules.training import CoefficientSamples, ProjectedCoefficients
from modules.utils import make_rng

NNLS_CAP_FACTOR = 10


# =======================================
# NNLS
# =======================================

@dataclass
class SparseWeights:
    """Non-negative weights with their support and the achieved constraint residual."""
    weights: np.ndarray
    residual: float
    tolerance: float
    iterations: int
    flagged: bool = False

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0.0)

    @property
    def n_support(self) -> int:
        return int(np.count_nonzero(self.weights > 0.0))

    @property
    def fraction(self) -> float:
        return self.n_support / max(1, len(self.weights))

    def to_dict(self) -> Dict[str, object]:
        return {
            "n_support": self.n_support,
            "n_total": int(len(self.weights)),
            "fraction": self.fraction,
            "residual": self.residual,
            "tolerance": self.tolerance,
            "iterations": self.iterations,
            "flagged": self.flagged,
        }


def nnls(C: np.ndarray, b: np.ndarray, tol: float = 0.0, max_iter: Optional[int] = None,
         cap_factor: int = NNLS_CAP_FACTOR) -> SparseWeights:
    """
    Lawson-Hanson active-set NNLS: min |C x - b| subject to x >= 0.
    Stops as soon as |C x - b| <= tol (the source of sparsity), at the KKT point, or
    after max_iter (default cap_factor * columns) iterations.

    :return: SparseWeights, flagged when tol was not reached
    """
    C = np.asarray(C, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = C.shape
    max_iter = cap_factor * n if max_iter is None else max_iter
    kkt_tol = 1e-12 * max(1.0, float(np.max(np.abs(C.T @ b), initial=0.0)))

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    # indices whose addition left the support unchanged; cleared when it changes
    blocked = np.zeros(n, dtype=bool)
    r = b.copy()
    w = C.T @ r
    it = 0
    capped = False
    while True:
        if np.linalg.norm(r) <= tol:
            break
        candidates = ~passive & ~blocked & (w > kkt_tol)
        if not np.any(candidates):
            break
        if it >= max_iter:
            capped = True
            break
        support = passive.copy()
        added = int(np.argmax(np.where(candidates, w, -np.inf)))
        passive[added] = True

        while True:
            it += 1
            z = np.zeros(n)
            idx = np.flatnonzero(passive)
            z[idx] = sla.lstsq(C[:, idx], b)[0]
            if np.all(z[idx] > 0.0):
                x = z
                break
            neg = passive & (z <= 0.0)
            step = np.min(x[neg] / (x[neg] - z[neg]))
            x = x + step * (z - x)
            passive &= x > 1e-300
            x[~passive] = 0.0
            if it >= max_iter:
                capped = True
                break
        if capped:
            break
        if np.array_equal(passive, support):
            blocked[added] = True
        else:
            blocked[:] = False
        r = b - C @ x
        w = C.T @ r

    achieved = float(np.linalg.norm(C @ x - b))
    flagged = capped or achieved > tol
    if flagged and tol > 0.0:
        logger.warning(f"[NNLS] Tolerance {tol:.3e} not reached: residual {achieved:.3e} after {it} iterations")
    logger.debug(f"[NNLS] {m}x{n}: support {np.count_nonzero(x)} residual {achieved:.3e} iterations {it}")
    return SparseWeights(x, achieved, tol, it, flagged)


# =======================================
# ELEMENT EMPIRICAL QUADRATURE
# =======================================

@dataclass
class EqConstraintMatrix:
    matrix: np.ndarray
    rhs: np.ndarray
    tolerance: float


def residual_constraints(arch: Archetype, samples: CoefficientSamples, n: int, m: int,
                         cfg: Optional[SolverConfig] = None, workers: int = 1) -> np.ndarray:
    """
    Manifold-accuracy rows: for every training triplet, J_b^-1 G with
    G[:, k] = Z_k^T r_k the unweighted element contributions and J_b the HF reduced
    Jacobian in alpha at the triplet.
    """
    Z, W = arch.basis.truncated(n, m)

    def block(j: int) -> np.ndarray:
        comp = deploy(0, arch, samples.mus[j])
        model = ReducedLocalModel(comp, Z, W, None, cfg)
        alpha, beta = samples.alphas[j, :n], samples.betas[j, :m]
        G = model.element_projections(alpha, beta)
        _, Ja, _ = model.linearize(alpha, beta)
        try:
            return np.linalg.solve(Ja, G)
        except np.linalg.LinAlgError:
            logger.warning(f"[EQ] Singular reduced Jacobian at training triplet {j} of '{arch.label}'; using least squares")
            return sla.lstsq(Ja, G)[0]

    blocks = run_parallel(block, list(range(len(samples))), workers, f"eq-{arch.label}")
    return np.vstack(blocks) if blocks else np.zeros((0, arch.mesh.n_elements))


def build_residual_eq(arch: Archetype, samples: CoefficientSamples, n: int, m: int, tol_eq: float,
                      cfg: Optional[SolverConfig] = None, workers: int = 1,
                      cap_factor: int = NNLS_CAP_FACTOR) -> SparseWeights:
    """
    Element weights reproducing the preconditioned training residuals and the
    archetype area; the tolerance is relative to |C 1|.
    """
    C = np.vstack([residual_constraints(arch, samples, n, m, cfg, workers), arch.element_areas[None, :]])
    b = C @ np.ones(C.shape[1])
    constraints = EqConstraintMatrix(C, b, tol_eq * float(np.linalg.norm(b)))
    result = nnls(constraints.matrix, constraints.rhs, constraints.tolerance, cap_factor=cap_factor)
    arch.element_weights[(n, m)] = result.weights
    logger.info(
        f"[EQ] '{arch.label}' (n, m)=({n}, {m}): {result.n_support}/{len(result.weights)} elements "
        f"({100 * result.fraction:.1f}%), residual {result.residual:.3e}"
    )
    return result


# =======================================
# PORT EMPIRICAL QUADRATURE
# =======================================

def port_jump_densities(system, fields: Sequence[np.ndarray]) -> List[np.ndarray]:
    """
    Pointwise squared jumps at the reference port points of every component,
    eta_i(q) = J_q sum_j |u_i(x_q) - u_j(x_q)|^2 over the owners j.
    """
    ones = [np.ones(len(c.port_points)) for c in system.components]
    op = assemble_jump_operator(system, ones, include_jacobian=False)
    r = sum(B @ u for B, u in zip(op.blocks, fields)) if op.n_rows else np.zeros(0)
    densities = []
    for i, comp in enumerate(system.components):
        rows = op.row_component == i
        eta = np.bincount(op.row_point[rows], weights=r[rows] ** 2, minlength=len(comp.port_points))
        densities.append(eta * comp.port_jacobian)
    return densities


def build_port_eq(
    library: ArchetypeLibrary,
    params: Sequence[GlobalParameter],
    projected: ProjectedCoefficients,
    n: int,
    m: int,
    tol_eq_p: float,
    seed: int = 0,
    interpolation: Optional[float] = None,
    cap_factor: int = NNLS_CAP_FACTOR,
) -> Dict[str, SparseWeights]:
    """
    Port weights per archetype from jump densities at random convex interpolations
    (1 - s) alpha + s alpha_0 between the projected coefficients and the sample means,
    one s ~ U(0, 1) per configuration drawn from the Philox stream keyed by seed,
    plus an all-ones row.

    :param interpolation: fixed s for every configuration instead of the random draw
    """
    rng = make_rng(seed)
    draws = rng.uniform(0.0, 1.0, size=len(params))
    if interpolation is not None:
        draws = np.full(len(params), float(interpolation))
    rows: Dict[str, List[np.ndarray]] = {label: [] for label in library.labels}

    for k, param in enumerate(params):
        system = instantiate(library, param)
        s = draws[k]
        fields = []
        for comp in system.components:
            arch = comp.archetype
            samples = projected[comp.label]
            j = int(np.flatnonzero((samples.configs == k) & (samples.components == comp.index))[0])
            a0, b0 = arch.coefficient_means
            alpha = (1.0 - s) * samples.alphas[j, :n] + s * a0[:n]
            beta = (1.0 - s) * samples.betas[j, :m] + s * b0[:m]
            Z, W = arch.basis.truncated(n, m)
            fields.append(arch.field(Z @ alpha + W @ beta))
        for comp, eta in zip(system.components, port_jump_densities(system, fields)):
            rows[comp.label].append(eta)

    results = {}
    for label, eta_rows in rows.items():
        arch = library[label]
        rho_hf = arch.port_quadrature.weights
        C = np.vstack(eta_rows + [np.ones((1, len(rho_hf)))])
        b = C @ rho_hf
        result = nnls(C, b, tol_eq_p * float(np.linalg.norm(b)), cap_factor=cap_factor)
        arch.port_weights[(n, m)] = result.weights
        results[label] = result
        logger.info(
            f"[EQ] '{label}' port (n, m)=({n}, {m}): {result.n_support}/{len(rho_hf)} points, residual {result.residual:.3e}"
        )
    return results


# =======================================
# EMPIRICAL INTERPOLATION
# =======================================

def sample_port_modes(arch: Archetype, modes: np.ndarray) -> np.ndarray:
    """Values of dof-vector columns at the reference port points, shape (k, N_p, D)."""
    bq = arch.port_quadrature
    D = arch.space.n_components
    E = evaluation_matrix(arch.space, bq.elements, bq.local)
    values = np.asarray(E @ modes).reshape(len(bq), D, -1)
    return np.transpose(values, (2, 0, 1))


@dataclass
class EimPointSet:
    """Ordered EIM points and the sampled modes used for least-squares reconstruction."""
    indices: np.ndarray
    modes: np.ndarray
    residual_norms: List[float] = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.indices)

    def reconstruct(self, values: np.ndarray) -> np.ndarray:
        """
        Pointwise least-squares reconstruction from the values at the selected points.

        :param values: (n_samples, N_p, D) fields at all port points
        :return: reconstructions of the same shape
        """
        A = self.modes[:, self.indices, :].reshape(self.m, -1).T
        rhs = values[:, self.indices, :].reshape(len(values), -1).T
        coeffs = sla.lstsq(A, rhs)[0]
        return np.einsum("ls,lpd->spd", coeffs, self.modes)

    def linf_error(self, values: np.ndarray) -> float:
        """Mean over samples of max_q |u - I u| / max_q |u|."""
        err = np.linalg.norm(values - self.reconstruct(values), axis=2).max(axis=1)
        ref = np.linalg.norm(values, axis=2).max(axis=1)
        return float(np.mean(err / np.where(ref > 0.0, ref, 1.0)))


def eim_select(modes: np.ndarray, m: Optional[int] = None) -> EimPointSet:
    """
    Greedy vector EIM: the next point maximizes the pointwise 2-norm of the residual
    of the next mode after least-squares reconstruction over the points chosen so far.
    Ties go to the lowest index.

    :param modes: (k, N_p, D) sampled modes
    :raises EimRankError: residual vanishes before m points
    """
    modes = np.asarray(modes, dtype=float)
    m = modes.shape[0] if m is None else m
    if m > modes.shape[0]:
        raise EimRankError(modes.shape[0], m)
    scale = float(np.max(np.linalg.norm(modes, axis=2), initial=0.0))
    indices: List[int] = []
    norms: List[float] = []
    for k in range(m):
        psi = modes[k]
        if indices:
            A = modes[:k][:, indices, :].reshape(k, -1).T
            coeffs = sla.lstsq(A, psi[indices].ravel())[0]
            psi = psi - np.einsum("l,lpd->pd", coeffs, modes[:k])
        pointwise = np.linalg.norm(psi, axis=1)
        pointwise[indices] = -np.inf
        best = int(np.argmax(pointwise))
        if not pointwise[best] > 1e-14 * max(scale, 1e-300):
            raise EimRankError(len(indices), m)
        indices.append(best)
        norms.append(float(pointwise[best]))
    logger.debug(f"[EIM] Selected {m} points: {indices}")
    return EimPointSet(np.array(indices, dtype=np.int64), modes[:m].copy(), norms)


def build_eim(arch: Archetype, m: int) -> EimPointSet:
    """EIM points of the leading m port modes of an archetype; stored on the archetype."""
    _, W = arch.basis.truncated(0, m)
    points = eim_select(sample_port_modes(arch, W), m)
    arch.eim_points[m] = points.indices
    logger.info(f"[EIM] '{arch.label}': {m} points selected")
    return points


def eim_objective(coupled: CoupledModel, m: int) -> JumpSystem:
    """Jump system restricted to the EIM points with unit weights."""
    weights, include_jacobian = objective_port_weights(coupled.system, "eim", 0, m)
    return assemble_jump_system(coupled, weights, include_jacobian)


def support_report(library: ArchetypeLibrary) -> List[Dict[str, object]]:
    """Support sizes of the element and port weights stored on the archetypes."""
    rows = []
    for arch in library:
        for (n, m), w in sorted(arch.element_weights.items()):
            rows.append({"archetype": arch.label, "kind": "element", "n": n, "m": m,
                         "support": int(np.count_nonzero(w)), "total": int(len(w))})
        for (n, m), w in sorted(arch.port_weights.items()):
            rows.append({"archetype": arch.label, "kind": "port", "n": n, "m": m,
                         "support": int(np.count_nonzero(w)), "total": int(len(w))})
        for m, idx in sorted(arch.eim_points.items()):
            rows.append({"archetype": arch.label, "kind": "eim", "n": 0, "m": m,
                         "support": int(len(idx)), "total": int(len(arch.port_quadrature))})
    return rows
