# modules/training.py
"""
Offline data compression: parameter draws, snapshot harvesting with the HF-CB
model, bubble/port splitting, POD by the method of snapshots and projected
coefficients.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla

from modules.components import ArchetypeLibrary, GlobalParameter, instantiate
from modules.config import ParameterBoxes, SolverConfig
from modules.errors import ConfigurationMismatchError, Os2Error, StageError
from modules.fe_core import InnerProduct
from modules.hf_solvers import HfCbSolution, solve_hf_cb
from modules.logger import logger
from modules.task_manager import run_parallel
from modules.utils import make_rng

# relative cut on the Gram eigenvalues sigma^2; round-off in the method of snapshots sits near eps * sigma_1^2
RANK_RTOL = 1e-12


# =======================================
# PARAMETER DRAWS
# =======================================

def draw_parameters(boxes: ParameterBoxes, n: int, seed: int) -> List[GlobalParameter]:
    """
    n configurations from the Philox stream keyed by seed. Per configuration the
    stream yields, in order: an index into q_a, then E1, E2, E3, s (uniform in their boxes).
    """
    rng = make_rng(seed)
    params = []
    for _ in range(n):
        q_a = int(boxes.q_a[int(rng.integers(len(boxes.q_a)))])
        E1 = float(rng.uniform(*boxes.E1))
        E2 = float(rng.uniform(*boxes.E2))
        E3 = float(rng.uniform(*boxes.E3))
        s = float(rng.uniform(*boxes.s))
        params.append(GlobalParameter(q_a, E1, E2, E3, s))
    return params


# =======================================
# SNAPSHOTS
# =======================================

@dataclass
class Snapshot:
    """One local field: configuration k, component i, its archetype label and local parameter."""
    config: int
    component: int
    label: str
    mu: np.ndarray
    u: np.ndarray


@dataclass
class SnapshotSet:
    records: List[Snapshot]
    parameters: List[GlobalParameter]
    bubble: Dict[str, np.ndarray] = field(default_factory=dict)
    port: Dict[str, np.ndarray] = field(default_factory=dict)
    solutions: List[HfCbSolution] = field(default_factory=list, repr=False)

    def labels(self) -> List[str]:
        return sorted({r.label for r in self.records})

    def of(self, label: str) -> List[Snapshot]:
        return [r for r in self.records if r.label == label]

    def fields(self, label: str) -> np.ndarray:
        """(N_dofs, n_snapshots) homogeneous fields of one archetype."""
        return np.column_stack([r.u for r in self.of(label)])

    def count(self, label: str) -> int:
        return len(self.of(label))


def solve_configurations(library: ArchetypeLibrary, params: Sequence[GlobalParameter], cfg: SolverConfig,
                         workers: int = 1, stage: str = "harvest") -> List[HfCbSolution]:
    """HF-CB solves of a batch of configurations, ordered like params."""

    def job(item: Tuple[int, GlobalParameter]) -> HfCbSolution:
        k, param = item
        try:
            return solve_hf_cb(instantiate(library, param), cfg)
        except Os2Error as e:
            logger.error(f"[TRAINING] Configuration {k} ({param.to_dict()}) failed: {e}")
            raise StageError(f"{stage} configuration {k}", e) from e

    solutions = run_parallel(job, list(enumerate(params)), workers, stage)
    logger.info(f"[TRAINING] {stage}: {len(solutions)} HF-CB solves done")
    return solutions


def split_snapshots(library: ArchetypeLibrary, snapshots: SnapshotSet) -> SnapshotSet:
    """u^p = E(u|port), u^b = u - u^p per archetype."""
    for label in snapshots.labels():
        arch = library[label]
        U = snapshots.fields(label)
        bubble, port = arch.extension.split(U)
        snapshots.bubble[label] = bubble
        snapshots.port[label] = port
        logger.debug(f"[TRAINING] '{label}': {U.shape[1]} snapshots split into bubble/port parts")
    return snapshots


def snapshots_from_solutions(solutions: Sequence[HfCbSolution], params: Sequence[GlobalParameter]) -> SnapshotSet:
    records = []
    for k, sol in enumerate(solutions):
        for comp, u in zip(sol.system.components, sol.fields):
            lift = comp.archetype.lift
            u_hom = u if lift is None else u - lift
            records.append(Snapshot(k, comp.index, comp.label, comp.mu.copy(), u_hom))
    return SnapshotSet(records, list(params), solutions=list(solutions))


def harvest(library: ArchetypeLibrary, params: Sequence[GlobalParameter], cfg: SolverConfig,
            workers: int = 1) -> SnapshotSet:
    """HF-CB solves of the training configurations, split into bubble and port datasets."""
    solutions = solve_configurations(library, params, cfg, workers, "harvest")
    snapshots = split_snapshots(library, snapshots_from_solutions(solutions, params))
    counts = {label: snapshots.count(label) for label in snapshots.labels()}
    logger.info(f"[TRAINING] Harvested {len(params)} configurations: {counts}")
    return snapshots


# =======================================
# POD
# =======================================

def pod(dataset: np.ndarray, inner: InnerProduct, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    POD by the method of snapshots in the inner product of the archetype.

    :param dataset: (N, n_snapshots)
    :param k: requested number of modes (capped at the numerical rank with a warning)
    :return: (modes (N, k'), singular values (n_snapshots,) nonincreasing)
    """
    dataset = np.asarray(dataset, dtype=float)
    N, ns = dataset.shape
    if ns == 0:
        return np.zeros((N, 0)), np.zeros(0)
    G = inner.gram(dataset)
    G = 0.5 * (G + G.T)
    lam, V = np.linalg.eigh(G)
    order = np.argsort(-lam, kind="stable")
    lam, V = lam[order], V[:, order]
    sigma = np.sqrt(np.clip(lam, 0.0, None))

    rank = int(np.count_nonzero(lam > RANK_RTOL * lam[0])) if lam[0] > 0.0 else 0
    if k > rank:
        logger.warning(f"[POD] Requested {k} modes but the dataset has numerical rank {rank}; returning {rank}")
        k = rank
    if k == 0:
        return np.zeros((N, 0)), sigma

    modes = dataset @ (V[:, :k] / sigma[:k])
    # re-orthonormalize against round-off
    L = np.linalg.cholesky(inner.gram(modes))
    modes = sla.solve_triangular(L, modes.T, lower=True).T
    signs = np.sign(modes[np.argmax(np.abs(modes), axis=0), np.arange(k)])
    modes = modes * np.where(signs == 0.0, 1.0, signs)
    logger.debug(f"[POD] {k} modes, sigma_1={sigma[0]:.3e}, sigma_k={sigma[k - 1]:.3e}")
    return modes, sigma


@dataclass
class ReducedBasisPair:
    """Bubble modes Z (N, n) and extended-port modes W (N, m), orthonormal in the archetype inner product."""
    Z: np.ndarray
    W: np.ndarray
    sigma_bubble: np.ndarray
    sigma_port: np.ndarray
    inner_kind: str = "H1"

    @property
    def n(self) -> int:
        return self.Z.shape[1]

    @property
    def m(self) -> int:
        return self.W.shape[1]

    def truncated(self, n: int, m: int) -> Tuple[np.ndarray, np.ndarray]:
        if n > self.n or m > self.m:
            raise ConfigurationMismatchError(f"Requested (n, m)=({n}, {m}) but the basis holds ({self.n}, {self.m})")
        return self.Z[:, :n], self.W[:, :m]


def build_bases(library: ArchetypeLibrary, snapshots: SnapshotSet, n: int, m: int) -> Dict[str, ReducedBasisPair]:
    """POD of the bubble and port datasets of every archetype; attaches the pair to the archetype."""
    bases = {}
    for label in snapshots.labels():
        arch = library[label]
        Z, sb = pod(snapshots.bubble[label], arch.inner, n)
        W, sp_ = pod(snapshots.port[label], arch.inner, m)
        bases[label] = ReducedBasisPair(Z, W, sb, sp_, arch.inner.kind)
        arch.basis = bases[label]
        logger.info(f"[POD] '{label}': n={Z.shape[1]} bubble modes, m={W.shape[1]} port modes")
    return bases


# =======================================
# PROJECTED COEFFICIENTS
# =======================================

@dataclass
class CoefficientSamples:
    alphas: np.ndarray
    betas: np.ndarray
    mus: np.ndarray
    configs: np.ndarray
    components: np.ndarray

    def __len__(self) -> int:
        return len(self.alphas)


@dataclass
class ProjectedCoefficients:
    samples: Dict[str, CoefficientSamples]

    def __getitem__(self, label: str) -> CoefficientSamples:
        return self.samples[label]

    def means(self, label: str) -> Tuple[np.ndarray, np.ndarray]:
        s = self.samples[label]
        return s.alphas.mean(axis=0), s.betas.mean(axis=0)


def project_coefficients(library: ArchetypeLibrary, snapshots: SnapshotSet,
                         bases: Optional[Dict[str, ReducedBasisPair]] = None) -> ProjectedCoefficients:
    """
    alpha = Z^T X u^b and beta = W^T X u^p per snapshot; stores the sample means on the
    archetypes as the online initial condition.
    """
    samples = {}
    for label in snapshots.labels():
        arch = library[label]
        basis = (bases or {}).get(label, arch.basis)
        if basis is None:
            raise ConfigurationMismatchError(f"No basis for archetype '{label}'")
        Ub, Up = snapshots.bubble[label], snapshots.port[label]
        if Ub.shape[0] != basis.Z.shape[0]:
            raise ConfigurationMismatchError(f"Snapshot size {Ub.shape[0]} does not match basis size {basis.Z.shape[0]}")
        records = snapshots.of(label)
        samples[label] = CoefficientSamples(
            alphas=arch.inner.gram(basis.Z, Ub).T,
            betas=arch.inner.gram(basis.W, Up).T,
            mus=np.array([r.mu for r in records]),
            configs=np.array([r.config for r in records]),
            components=np.array([r.component for r in records]),
        )
    projected = ProjectedCoefficients(samples)
    for label in samples:
        library[label].coefficient_means = projected.means(label)
    return projected
