# modules/components.py
"""
Component library: archetypes, geometric maps, deployed systems and the
partition of unity.

An archetype owns a reference mesh, its dof layout (constrained / port / bubble)
and a family of maps; a deployed component is an archetype instantiated at a
local parameter. Deployed meshes are obtained by moving the reference nodes
(discretize-then-map), so dof vectors are shared between reference and
deployed configurations.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse.linalg import splu

from modules.config import ExperimentConfig, GeometryConfig, ParameterBoxes
from modules.errors import ExtensionError, GeometryError, OutsideDomainError, OwnershipError, ParameterBoxError
from modules.fe_core import (
    BoundaryQuadrature,
    FeSpace,
    InnerProduct,
    assemble_inner_product,
    boundary_quadrature,
    element_measures,
    evaluate_located,
)
from modules.logger import logger
from modules.mesh import INSIDE_TOL, Mesh, structured_quad_mesh, subdivide
from modules.physics import LoadSpec, MaterialField, NeoHookeanForm, LinearElasticForm, VariationalForm
from modules.utils import validate_in_box

PORT_TAG = "port"
DIRICHLET_TAG = "dir"
SYMMETRY_TAG = "symmetry"


# =======================================
# GEOMETRIC MAPS
# =======================================

class IdentityMap:
    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.array(x, dtype=float)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.broadcast_to(np.eye(x.shape[1]), (len(x), x.shape[1], x.shape[1])).copy()

    def map_breaks(self, xs, ys):
        return xs, ys


class ShiftMap:
    """Rigid translation x -> x + shift."""

    def __init__(self, shift: Sequence[float]):
        self.shift = np.asarray(shift, dtype=float)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) + self.shift[None, :]

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return IdentityMap().gradient(x)

    def map_breaks(self, xs, ys):
        return xs + self.shift[0], (None if ys is None else ys + self.shift[1])


class HorizontalPiecewiseLinearMap:
    """
    x1 -> piecewise-linear interpolation of (ref_breaks -> phys_breaks), x2 unchanged.
    Injective as long as both break sequences are strictly increasing.
    """

    def __init__(self, ref_breaks: Sequence[float], phys_breaks: Sequence[float]):
        self.ref = np.asarray(ref_breaks, dtype=float)
        self.phys = np.asarray(phys_breaks, dtype=float)
        if len(self.ref) != len(self.phys) or len(self.ref) < 2:
            raise GeometryError("Piecewise-linear map needs matching break sequences")
        if np.any(np.diff(self.ref) <= 0.0) or np.any(np.diff(self.phys) <= 0.0):
            raise GeometryError(f"Non-injective horizontal map: {self.ref.tolist()} -> {self.phys.tolist()}")
        self.slopes = np.diff(self.phys) / np.diff(self.ref)

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = np.array(x, dtype=float)
        out[:, 0] = np.interp(out[:, 0], self.ref, self.phys)
        return out

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        piece = np.clip(np.searchsorted(self.ref, x[:, 0], side="right") - 1, 0, len(self.slopes) - 1)
        G = IdentityMap().gradient(x)
        G[:, 0, 0] = self.slopes[piece]
        return G

    def map_breaks(self, xs, ys):
        return np.interp(xs, self.ref, self.phys), ys


def boundary_jacobian(mapping, ref_points: np.ndarray, ref_normals: np.ndarray) -> np.ndarray:
    """Surface measure ratio det(grad Phi) |grad Phi^-T n| at reference boundary points."""
    G = mapping.gradient(ref_points)
    det = np.linalg.det(G)
    inv_t = np.swapaxes(np.linalg.inv(G), 1, 2)
    return det * np.linalg.norm(np.einsum("pij,pj->pi", inv_t, ref_normals), axis=1)


def segment_distance(points: np.ndarray, segments: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Distance from each point to the nearest of a set of segments, and its gradient.
    Degenerate segments (equal end points) act as points, which covers 1D ports.

    :param points: (npts, d)
    :param segments: (k, 2, d)
    :return: (distance (npts,), gradient (npts, d))
    """
    points = np.atleast_2d(points)
    a = segments[:, 0, :]
    ab = segments[:, 1, :] - a
    length2 = np.maximum(np.einsum("kd,kd->k", ab, ab), 1e-300)
    t = np.einsum("pkd,kd->pk", points[:, None, :] - a[None, :, :], ab) / length2[None, :]
    t = np.clip(t, 0.0, 1.0)
    diff = points[:, None, :] - (a[None, :, :] + t[:, :, None] * ab[None, :, :])
    dist = np.linalg.norm(diff, axis=2)
    nearest = np.argmin(dist, axis=1)
    rows = np.arange(len(points))
    d = dist[rows, nearest]
    v = diff[rows, nearest]
    grad = np.where(d[:, None] > 0.0, v / np.maximum(d, 1e-300)[:, None], 0.0)
    return d, grad


# =======================================
# EXTENSION OPERATOR
# =======================================

class ExtensionOperator:
    """
    Discrete harmonic extension: w on the port dofs -> E w with (E w, v) = 0 for every bubble v.
    The bubble block of the inner-product matrix is factorized once.
    """

    def __init__(self, space: FeSpace, inner: InnerProduct):
        self.n_dofs = space.n_dofs
        self.port = space.port_dofs
        self.bubble = space.bubble_dofs
        X = inner.matrix.tocsr()
        X_b = X[self.bubble]
        self.X_bp = X_b[:, self.port].tocsr()
        self._lu = None
        try:
            if len(self.bubble):
                self._lu = splu(X_b[:, self.bubble].tocsc())
        except RuntimeError as e:
            raise ExtensionError(f"Singular bubble block of the inner product: {e}") from e

    def apply(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape[0] != len(self.port):
            raise ValueError(f"Expected {len(self.port)} port values, got {w.shape[0]}")
        out = np.zeros((self.n_dofs,) + w.shape[1:])
        out[self.port] = w
        if len(self.bubble):
            out[self.bubble] = -self._lu.solve(np.asarray(self.X_bp @ w))
        return out

    def trace(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u)[self.port]

    def split(self, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(bubble part, extended-port part) of a field; they sum to u exactly on free dofs."""
        port_part = self.apply(self.trace(u))
        return u - port_part, port_part


# =======================================
# ARCHETYPES
# =======================================

FormFactory = Callable[[FeSpace, np.ndarray, bool, bool], VariationalForm]


class Archetype:
    """
    Reference component with dof layout, map family and offline payloads.

    :param label: archetype label
    :param space: reference dof space (constraints and port mask set)
    :param parameter_names: names of the local parameter entries
    :param parameter_box: name -> (low, high)
    :param form_factory: (deployed space, mu, symmetric_test_gradient, linear) -> form
    :param mapping_factory: mu -> geometric map (identity when omitted)
    :param lift: fixed dof vector carrying inhomogeneous Dirichlet data
    """

    def __init__(
        self,
        label: str,
        space: FeSpace,
        parameter_names: Sequence[str],
        parameter_box: Dict[str, Tuple[float, float]],
        form_factory: FormFactory,
        mapping_factory: Optional[Callable[[np.ndarray], object]] = None,
        lift: Optional[np.ndarray] = None,
        inner_kind: str = "H1",
        port_points_per_facet: int = 3,
    ):
        if np.any(space.port & space.constrained):
            raise GeometryError(f"Archetype '{label}': port and Dirichlet dofs overlap")
        if not np.any(space.port):
            raise GeometryError(f"Archetype '{label}' has no port dofs")
        self.label = label
        self.space = space
        self.mesh = space.mesh
        self.parameter_names = tuple(parameter_names)
        self.parameter_box = dict(parameter_box)
        self.form_factory = form_factory
        self.mapping_factory = mapping_factory or (lambda mu: IdentityMap())
        self.lift = lift
        self.inner: InnerProduct = assemble_inner_product(space, inner_kind)
        self.extension = ExtensionOperator(space, self.inner)
        self.port_quadrature: BoundaryQuadrature = boundary_quadrature(self.mesh, PORT_TAG, port_points_per_facet)
        self.element_areas = element_measures(self.mesh)

        # offline payloads
        self.basis = None
        self.coefficient_means: Optional[Tuple[np.ndarray, np.ndarray]] = None
        self.element_weights: Dict[Tuple[int, int], np.ndarray] = {}
        self.port_weights: Dict[Tuple[int, int], np.ndarray] = {}
        self.eim_points: Dict[int, np.ndarray] = {}

        logger.debug(
            f"[COMPONENTS] Archetype '{label}': {space.n_dofs} dofs "
            f"({len(space.port_dofs)} port, {len(space.bubble_dofs)} bubble), {len(self.port_quadrature)} port points"
        )

    @property
    def n_dofs(self) -> int:
        return self.space.n_dofs

    @property
    def port_dofs(self) -> np.ndarray:
        return self.space.port_dofs

    @property
    def bubble_dofs(self) -> np.ndarray:
        return self.space.bubble_dofs

    def check_parameters(self, mu: Sequence[float]) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        if len(mu) != len(self.parameter_names):
            raise ParameterBoxError(f"Archetype '{self.label}' expects {len(self.parameter_names)} parameters, got {len(mu)}")
        for name, value in zip(self.parameter_names, mu):
            ok, msg = validate_in_box(name, float(value), self.parameter_box[name])
            if not ok:
                raise ParameterBoxError(f"Archetype '{self.label}': {msg}")
        return mu

    def mapping(self, mu: np.ndarray):
        return self.mapping_factory(np.asarray(mu, dtype=float))

    def deployed_space(self, mu: np.ndarray) -> FeSpace:
        return self.space.with_mesh(self.mesh.mapped(self.mapping(mu)))

    def make_form(self, mu: np.ndarray, symmetric_test_gradient: bool = False, linear: bool = False,
                  space: Optional[FeSpace] = None) -> VariationalForm:
        space = space or self.deployed_space(mu)
        return self.form_factory(space, np.asarray(mu, dtype=float), symmetric_test_gradient, linear)

    def extend(self, w: np.ndarray) -> np.ndarray:
        return self.extension.apply(w)

    def field(self, u: np.ndarray) -> np.ndarray:
        """Adds the Dirichlet lift (if any) to a homogeneous dof vector."""
        return u if self.lift is None else u + (self.lift if u.ndim == 1 else self.lift[:, None])


def extend(arch: Archetype, w: np.ndarray) -> np.ndarray:
    """Harmonic extension of port values w into the archetype."""
    return arch.extend(w)


def _elastic_form_factory(material_of, load_of, nu: float) -> FormFactory:
    def factory(space: FeSpace, mu: np.ndarray, symmetric: bool, linear: bool) -> VariationalForm:
        cls = LinearElasticForm if linear else NeoHookeanForm
        return cls(space, material_of(mu, nu), load_of(mu), symmetric_test_gradient=symmetric)
    return factory


def internal_offset(geometry: GeometryConfig, q_a: int) -> float:
    """Left edge x0 of the first internal component for Q_a centered instances."""
    return 0.5 * (1.0 - (q_a * geometry.d + geometry.delta))


def internal_shift(geometry: GeometryConfig, q_a: int, i: int) -> float:
    """Horizontal shift of internal component i (1-based)."""
    return internal_offset(geometry, q_a) + (i - 1) * geometry.d


def external_hole(geometry: GeometryConfig, q_a: int) -> Tuple[float, float]:
    """Horizontal extent [a, b] of the external port hole; b - a = Q_a d - delta."""
    x0 = internal_offset(geometry, q_a)
    return x0 + geometry.delta, x0 + q_a * geometry.d


def build_internal_archetype(geometry: GeometryConfig, boxes: ParameterBoxes, h: float, degree: int = 2) -> Archetype:
    """
    Internal archetype on [0, d + delta] x [0, 2d]: traction patch centered on the bottom,
    Dirichlet on the rest of the bottom, port on the other three sides.
    """
    d, delta, width, height = geometry.d, geometry.delta, geometry.d + geometry.delta, geometry.height
    r0 = 0.5 * (width - geometry.l_r)
    r1 = r0 + geometry.l_r
    xs = subdivide([0.0, delta, r0, r1, d, width], h)
    ys = subdivide([0.0, height - delta, height], h)

    def classify(side: int, mid: np.ndarray) -> str:
        if side == 0:
            return "neumann-r" if r0 < mid[0] < r1 else DIRICHLET_TAG
        return PORT_TAG

    mesh = structured_quad_mesh(xs, ys, degree, classify=classify)
    space = FeSpace(mesh, 2)
    space.constrain(mesh.tag_nodes(DIRICHLET_TAG))
    space.set_port(mesh.tag_nodes(PORT_TAG))

    q_max = max(boxes.q_a)
    box = {
        "E1": tuple(boxes.E1),
        "s": tuple(boxes.s),
        "x_shift": (internal_offset(geometry, q_max), internal_shift(geometry, q_max, q_max)),
    }
    factory = _elastic_form_factory(
        lambda mu, nu: MaterialField(mu[0], mu[0], mu[0], nu),
        lambda mu: LoadSpec(s=float(mu[1]), top_scale=0.0),
        geometry.nu,
    )
    return Archetype(
        "int", space, ("E1", "s", "x_shift"), box, factory,
        mapping_factory=lambda mu: ShiftMap([mu[2], 0.0]),
    )


def build_external_archetype(geometry: GeometryConfig, boxes: ParameterBoxes, h: float, degree: int = 2) -> Archetype:
    """
    External archetype: unit square minus the hole [a, b] x [0, 2d - delta], built for
    Q = q_ref and deformed horizontally for other hole widths d_ext.
    """
    h_hole = geometry.height - geometry.delta
    a_ref, b_ref = external_hole(geometry, geometry.q_ref)
    xs = subdivide([0.0, a_ref, b_ref, 1.0], h)
    ys = subdivide([0.0, h_hole, geometry.height, 1.0 / 3.0, 2.0 / 3.0, 1.0], h)
    xm = 0.5 * (xs[:-1] + xs[1:])
    ym = 0.5 * (ys[:-1] + ys[1:])
    active = ~((a_ref < xm[None, :]) & (xm[None, :] < b_ref) & (ym[:, None] < h_hole))

    def classify(side: int, mid: np.ndarray) -> str:
        if side == 0 and abs(mid[1]) < 1e-12:
            return DIRICHLET_TAG
        if (side == 3 and abs(mid[0]) < 1e-12) or (side == 1 and abs(mid[0] - 1.0) < 1e-12):
            return SYMMETRY_TAG
        if side == 2 and abs(mid[1] - 1.0) < 1e-12:
            return "neumann-top"
        return PORT_TAG

    mesh = structured_quad_mesh(xs, ys, degree, active=active, classify=classify)
    space = FeSpace(mesh, 2)
    space.constrain(mesh.tag_nodes(DIRICHLET_TAG))
    space.constrain(mesh.tag_nodes(SYMMETRY_TAG), components=[0])
    space.set_port(mesh.tag_nodes(PORT_TAG))

    d_ext = [q * geometry.d - geometry.delta for q in boxes.q_a]
    box = {"E1": tuple(boxes.E1), "E2": tuple(boxes.E2), "E3": tuple(boxes.E3), "d_ext": (min(d_ext), max(d_ext))}

    def mapping(mu: np.ndarray) -> HorizontalPiecewiseLinearMap:
        a = 0.5 * (1.0 - mu[3])
        return HorizontalPiecewiseLinearMap((0.0, a_ref, b_ref, 1.0), (0.0, a, a + mu[3], 1.0))

    factory = _elastic_form_factory(
        lambda mu, nu: MaterialField(mu[0], mu[1], mu[2], nu),
        lambda mu: LoadSpec(s=0.0, top_scale=1.0),
        geometry.nu,
    )
    return Archetype("ext", space, ("E1", "E2", "E3", "d_ext"), box, factory, mapping_factory=mapping)


@dataclass
class ArchetypeLibrary:
    geometry: GeometryConfig
    boxes: ParameterBoxes
    archetypes: Dict[str, Archetype]

    def __getitem__(self, label: str) -> Archetype:
        return self.archetypes[label]

    def __iter__(self):
        return iter(self.archetypes.values())

    @property
    def labels(self) -> List[str]:
        return list(self.archetypes)


def build_library(cfg: ExperimentConfig) -> ArchetypeLibrary:
    """Internal and external archetypes of the benchmark."""
    cfg.geometry.validate(max(cfg.parameters.q_a))
    library = ArchetypeLibrary(
        geometry=cfg.geometry,
        boxes=cfg.parameters,
        archetypes={
            "int": build_internal_archetype(cfg.geometry, cfg.parameters, cfg.mesh.h_internal, cfg.mesh.degree),
            "ext": build_external_archetype(cfg.geometry, cfg.parameters, cfg.mesh.h_external, cfg.mesh.degree),
        },
    )
    logger.info(
        f"[COMPONENTS] Library built: int {library['int'].n_dofs} dofs, ext {library['ext'].n_dofs} dofs"
    )
    return library


def build_global_mesh(geometry: GeometryConfig, q_a: int, h: float, degree: int = 2) -> Mesh:
    """
    Monolithic mesh of the unit square, aligned with every internal component,
    the traction patches, the external hole and the material bands.
    """
    width = geometry.d + geometry.delta
    r0 = 0.5 * (width - geometry.l_r)
    shifts = [internal_shift(geometry, q_a, i) for i in range(1, q_a + 1)]
    a, b = external_hole(geometry, q_a)
    breaks = [0.0, 1.0, a, b]
    for x in shifts:
        breaks += [x, x + r0, x + r0 + geometry.l_r, x + width]
    xs = subdivide(breaks, h)
    ys = subdivide([0.0, geometry.height - geometry.delta, geometry.height, 1.0 / 3.0, 2.0 / 3.0, 1.0], h)
    patches = [(x + r0, x + r0 + geometry.l_r) for x in shifts]

    def classify(side: int, mid: np.ndarray) -> str:
        if side == 0:
            return "neumann-r" if any(lo < mid[0] < hi for lo, hi in patches) else DIRICHLET_TAG
        if side == 2:
            return "neumann-top"
        return SYMMETRY_TAG

    return structured_quad_mesh(xs, ys, degree, classify=classify)


# =======================================
# DEPLOYED SYSTEMS
# =======================================

@dataclass(frozen=True)
class GlobalParameter:
    """Parameter of one benchmark configuration."""
    q_a: int
    E1: float
    E2: float
    E3: float
    s: float

    @property
    def n_dd(self) -> int:
        return self.q_a + 1

    @property
    def labels(self) -> Tuple[str, ...]:
        return ("int",) * self.q_a + ("ext",)

    def local_parameters(self, geometry: GeometryConfig) -> List[np.ndarray]:
        mus = [np.array([self.E1, self.s, internal_shift(geometry, self.q_a, i)]) for i in range(1, self.q_a + 1)]
        mus.append(np.array([self.E1, self.E2, self.E3, self.q_a * geometry.d - geometry.delta]))
        return mus

    def to_dict(self) -> Dict[str, float]:
        return {"q_a": self.q_a, "E1": self.E1, "E2": self.E2, "E3": self.E3, "s": self.s}

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> "GlobalParameter":
        return cls(int(data["q_a"]), float(data["E1"]), float(data["E2"]), float(data["E3"]), float(data["s"]))


@dataclass
class DeployedComponent:
    """Archetype instance: deployed mesh, port points and their measure ratio."""
    index: int
    archetype: Archetype
    mu: np.ndarray
    mapping: object
    space: FeSpace
    port_points: np.ndarray
    port_jacobian: np.ndarray
    port_segments: np.ndarray
    _forms: Dict[Tuple[bool, bool], VariationalForm] = field(default_factory=dict, repr=False)

    @property
    def label(self) -> str:
        return self.archetype.label

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    def form(self, symmetric_test_gradient: bool = False, linear: bool = False) -> VariationalForm:
        key = (symmetric_test_gradient, linear)
        if key not in self._forms:
            self._forms[key] = self.archetype.make_form(self.mu, symmetric_test_gradient, linear, space=self.space)
        return self._forms[key]

    def port_distance(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return segment_distance(points, self.port_segments)


def deploy(index: int, archetype: Archetype, mu: Sequence[float]) -> DeployedComponent:
    mu = np.asarray(mu, dtype=float)
    mapping = archetype.mapping(mu)
    space = archetype.space.with_mesh(archetype.mesh.mapped(mapping))
    bq = archetype.port_quadrature
    mesh = space.mesh
    return DeployedComponent(
        index=index,
        archetype=archetype,
        mu=mu,
        mapping=mapping,
        space=space,
        port_points=mapping.apply(bq.points),
        port_jacobian=boundary_jacobian(mapping, bq.points, bq.normals),
        port_segments=mesh.facet_segments(mesh.facets(PORT_TAG)),
    )


class DeployedSystem:
    """
    Instantiated overlapping partition.

    owners[i][q] lists the components j != i whose closure contains port point q of
    component i away from their own port; neighbors[i] is the union over q.
    Ownership is not symmetric in general.
    """

    def __init__(self, components: List[DeployedComponent], parameter: Optional[GlobalParameter] = None,
                 tol: float = INSIDE_TOL):
        self.components = components
        self.parameter = parameter
        self.tol = tol
        self.owners: List[List[np.ndarray]] = []
        self.neighbors: List[List[int]] = []
        self._compute_ownership()

    @property
    def n_dd(self) -> int:
        return len(self.components)

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(c.label for c in self.components)

    def __getitem__(self, i: int) -> DeployedComponent:
        return self.components[i]

    def __iter__(self):
        return iter(self.components)

    def _compute_ownership(self) -> None:
        n = self.n_dd
        for i, ci in enumerate(self.components):
            pts = ci.port_points
            owned = np.zeros((len(pts), n), dtype=bool)
            for j, cj in enumerate(self.components):
                if j == i:
                    continue
                inside = cj.mesh.contains(pts, self.tol)
                if np.any(inside):
                    dist, _ = cj.port_distance(pts[inside])
                    owned[np.flatnonzero(inside), j] = dist > self.tol
            orphan = np.flatnonzero(~owned.any(axis=1))
            if len(orphan):
                raise OwnershipError(i, pts[orphan[0]])
            self.owners.append([np.flatnonzero(row) for row in owned])
            self.neighbors.append(sorted(int(j) for j in np.flatnonzero(owned.any(axis=0))))

    def ownership_counts(self, i: int) -> np.ndarray:
        return np.array([len(o) for o in self.owners[i]])


def instantiate(library: ArchetypeLibrary, parameter: GlobalParameter,
                labels: Optional[Sequence[str]] = None) -> DeployedSystem:
    """
    Deploys Q_a internal components and the external component for one configuration.

    :raises ParameterBoxError: Q_a or a parameter outside its box
    :raises GeometryError: inconsistent geometry constants or labels
    """
    if parameter.q_a not in library.boxes.q_a:
        raise ParameterBoxError(f"Q_a={parameter.q_a} not in {library.boxes.q_a}")
    if labels is not None and tuple(labels) != parameter.labels:
        raise GeometryError(f"Labels {tuple(labels)} do not match Q_a={parameter.q_a}")
    library.geometry.validate(parameter.q_a)
    components = []
    for i, (label, mu) in enumerate(zip(parameter.labels, parameter.local_parameters(library.geometry))):
        arch = library[label]
        components.append(deploy(i, arch, arch.check_parameters(mu)))
    system = DeployedSystem(components, parameter)
    logger.debug(f"[COMPONENTS] Deployed N_dd={system.n_dd} for {parameter.to_dict()}; neighbors={system.neighbors}")
    return system


def deploy_system(archetypes: Sequence[Archetype], mus: Sequence[Sequence[float]]) -> DeployedSystem:
    """Deploys an arbitrary list of archetype instances (no benchmark parameter)."""
    return DeployedSystem([deploy(i, a, mu) for i, (a, mu) in enumerate(zip(archetypes, mus))])


# =======================================
# PARTITION OF UNITY
# =======================================

class PartitionOfUnity:
    """
    Shepard weights phi_i(x) = w_i(x) / sum_j w_j(x) with w_i = dist(x, port of component i)
    inside Omega_i and 0 outside.
    """

    def __init__(self, system: DeployedSystem):
        self.system = system

    def _raw(self, points: np.ndarray, with_gradients: bool):
        n, npts = self.system.n_dd, len(points)
        located = []
        w = np.zeros((npts, n))
        dw = np.zeros((npts, n, points.shape[1]))
        for i, comp in enumerate(self.system.components):
            elements, local = comp.mesh.locate(points, strict=False)
            inside = elements >= 0
            if np.any(inside):
                dist, grad = comp.port_distance(points[inside])
                w[inside, i] = dist
                if with_gradients:
                    dw[inside, i] = grad
            located.append((elements, local, inside))
        total = w.sum(axis=1)
        empty = np.flatnonzero(total <= 0.0)
        if len(empty):
            p = points[empty[0]]
            distance = min(float(c.mesh._distance_outside(p[None, :])[0]) for c in self.system.components)
            raise OutsideDomainError(p, distance)
        return w, dw, total, located

    def weights(self, points: np.ndarray) -> np.ndarray:
        """(npts, N_dd) values phi_i(x)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        w, _, total, _ = self._raw(points, False)
        return w / total[:, None]

    def weights_and_gradients(self, points: np.ndarray):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        w, dw, total, located = self._raw(points, True)
        phi = w / total[:, None]
        dphi = (dw - phi[:, :, None] * dw.sum(axis=1, keepdims=True)) / total[:, None, None]
        return phi, dphi, located


class GlobalField:
    """Evaluator of x -> sum_i phi_i(x) u_i(x) for per-component dof vectors."""

    def __init__(self, system: DeployedSystem, fields: Sequence[np.ndarray]):
        if len(fields) != system.n_dd:
            raise ValueError(f"Expected {system.n_dd} component fields, got {len(fields)}")
        self.system = system
        self.fields = [np.asarray(f, dtype=float) for f in fields]
        self.pou = PartitionOfUnity(system)

    def evaluate(self, points: np.ndarray, with_gradients: bool = False):
        """
        :return: (values (npts, D), gradients (npts, D, d) or None)
        :raises OutsideDomainError: for points covered by no component
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        phi, dphi, located = self.pou.weights_and_gradients(points)
        D = self.system[0].space.n_components
        values = np.zeros((len(points), D))
        grads = np.zeros((len(points), D, points.shape[1])) if with_gradients else None
        for i, comp in enumerate(self.system.components):
            elements, local, inside = located[i]
            active = inside & (phi[:, i] > 0.0) if not with_gradients else inside
            if not np.any(active):
                continue
            u, du = evaluate_located(comp.space, self.fields[i], elements[active], local[active], with_gradients)
            values[active] += phi[active, i, None] * u
            if with_gradients:
                grads[active] += phi[active, i, None, None] * du + u[:, :, None] * dphi[active, i, None, :]
        return values, grads

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.evaluate(points)[0]


def pou_apply(system: DeployedSystem, fields: Sequence[np.ndarray]) -> GlobalField:
    return GlobalField(system, fields)
