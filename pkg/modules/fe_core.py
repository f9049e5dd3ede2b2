# modules/fe_core.py
"""
Finite-element core: Gauss rules, tensor-product Lagrange bases, dof spaces,
inner products, boundary quadrature and point evaluation of discrete fields.

Vector fields with D components number their dofs node * D + component.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from modules.errors import DegenerateElementError, EmptyTagError
from modules.logger import logger
from modules.mesh import SIDE_DIRECTIONS_2D, SIDE_NORMALS, Mesh, side_reference_points


# =======================================
# QUADRATURE
# =======================================

@lru_cache(maxsize=None)
def _gauss_1d(n: int) -> Tuple[np.ndarray, np.ndarray]:
    g, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (g + 1.0), 0.5 * w


def gauss_rule(n: int, dim: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Tensor Gauss-Legendre rule with n points per direction on [0, 1]^dim.
    Exact for polynomials of degree 2n - 1 in each variable.

    :return: (points (nq, dim), weights (nq,)); 2D index q = j * n + i for point (g_i, g_j)
    """
    g, w = _gauss_1d(n)
    if dim == 1:
        return g[:, None].copy(), w.copy()
    X, Y = np.meshgrid(g, g)
    WX, WY = np.meshgrid(w, w)
    return np.column_stack([X.ravel(), Y.ravel()]), (WX * WY).ravel()


# =======================================
# LAGRANGE BASIS
# =======================================

class LagrangeBasis:
    """Tensor-product Lagrange basis of degree p on the reference cell [0, 1]^dim."""

    def __init__(self, dim: int, degree: int):
        self.dim = dim
        self.degree = degree
        self.nodes_1d = np.linspace(0.0, 1.0, degree + 1)

    @property
    def size(self) -> int:
        return (self.degree + 1) ** self.dim

    def _lagrange_1d(self, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        t = np.asarray(t, dtype=float)
        n = self.nodes_1d
        k = len(n)
        values = np.ones((len(t), k))
        derivs = np.zeros((len(t), k))
        for a in range(k):
            others = [b for b in range(k) if b != a]
            denom = np.prod([n[a] - n[b] for b in others])
            for b in others:
                values[:, a] *= t - n[b]
            for c in others:
                term = np.ones(len(t))
                for b in others:
                    if b != c:
                        term *= t - n[b]
                derivs[:, a] += term
            values[:, a] /= denom
            derivs[:, a] /= denom
        return values, derivs

    def values(self, points: np.ndarray) -> np.ndarray:
        """(npts, nlp) basis values at reference points."""
        points = np.atleast_2d(points)
        lx, _ = self._lagrange_1d(points[:, 0])
        if self.dim == 1:
            return lx
        ly, _ = self._lagrange_1d(points[:, 1])
        return (ly[:, :, None] * lx[:, None, :]).reshape(len(points), -1)

    def gradients(self, points: np.ndarray) -> np.ndarray:
        """(npts, nlp, dim) reference gradients."""
        points = np.atleast_2d(points)
        lx, dlx = self._lagrange_1d(points[:, 0])
        if self.dim == 1:
            return dlx[:, :, None]
        ly, dly = self._lagrange_1d(points[:, 1])
        gx = (ly[:, :, None] * dlx[:, None, :]).reshape(len(points), -1)
        gy = (dly[:, :, None] * lx[:, None, :]).reshape(len(points), -1)
        return np.stack([gx, gy], axis=2)


def basis_for(mesh: Mesh) -> LagrangeBasis:
    return LagrangeBasis(mesh.dim, mesh.degree)


def volume_rule(mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
    """Element rule used for all volume integrals: (p + 1) Gauss points per direction."""
    return gauss_rule(mesh.degree + 1, mesh.dim)


def element_geometry(
    mesh: Mesh,
    ref_points: np.ndarray,
    elements: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Isoparametric geometry at reference points.

    :return: (detJ (ne, nq), physical basis gradients (ne, nq, nlp, d), basis values (nq, nlp))
    :raises DegenerateElementError: if any Jacobian determinant is non-positive
    """
    if elements is None:
        elements = np.arange(mesh.n_elements)
    basis = basis_for(mesh)
    X = mesh.nodes[mesh.connectivity[elements]]
    dN = basis.gradients(ref_points)
    J = np.einsum("eai,qaj->eqij", X, dN)
    detJ = np.linalg.det(J)
    bad = np.argwhere(detJ <= 0.0)
    if len(bad):
        raise DegenerateElementError(int(elements[bad[0][0]]))
    invJ = np.linalg.inv(J)
    dphi = np.einsum("qaj,eqji->eqai", dN, invJ)
    return detJ, dphi, basis.values(ref_points)


def element_measures(mesh: Mesh) -> np.ndarray:
    """Area (2D) or length (1D) of every element."""
    pts, w = volume_rule(mesh)
    detJ, _, _ = element_geometry(mesh, pts)
    return detJ @ w


# =======================================
# DOF SPACE
# =======================================

class FeSpace:
    """
    Lagrange space with D components per node.

    Dofs split into constrained (Dirichlet / normal constraints), port and bubble;
    port and bubble dofs together are the free dofs.
    """

    def __init__(self, mesh: Mesh, n_components: int = 1):
        self.mesh = mesh
        self.n_components = int(n_components)
        self.n_dofs = mesh.n_nodes * self.n_components
        self.constrained = np.zeros(self.n_dofs, dtype=bool)
        self.port = np.zeros(self.n_dofs, dtype=bool)
        D = self.n_components
        self.element_dofs = (mesh.connectivity[:, :, None] * D + np.arange(D)[None, None, :]).reshape(mesh.n_elements, -1)

    @property
    def degree(self) -> int:
        return self.mesh.degree

    def node_dofs(self, nodes: np.ndarray, components: Optional[Sequence[int]] = None) -> np.ndarray:
        comps = np.arange(self.n_components) if components is None else np.asarray(components)
        return (np.asarray(nodes)[:, None] * self.n_components + comps[None, :]).ravel()

    def constrain(self, nodes: np.ndarray, components: Optional[Sequence[int]] = None) -> None:
        self.constrained[self.node_dofs(nodes, components)] = True
        self.port &= ~self.constrained

    def set_port(self, nodes: np.ndarray) -> None:
        self.port[:] = False
        self.port[self.node_dofs(nodes)] = True
        self.port &= ~self.constrained

    @property
    def free_dofs(self) -> np.ndarray:
        return np.flatnonzero(~self.constrained)

    @property
    def port_dofs(self) -> np.ndarray:
        return np.flatnonzero(self.port)

    @property
    def bubble_dofs(self) -> np.ndarray:
        return np.flatnonzero(~self.constrained & ~self.port)

    def with_mesh(self, mesh: Mesh) -> "FeSpace":
        """Same dof layout on a moved copy of the mesh."""
        other = FeSpace(mesh, self.n_components)
        other.constrained = self.constrained.copy()
        other.port = self.port.copy()
        return other


def assemble_matrix(space: FeSpace, local: np.ndarray, elements: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """Sums element matrices (ne, nd, nd) into a sparse global matrix."""
    dofs = space.element_dofs if elements is None else space.element_dofs[elements]
    nd = dofs.shape[1]
    rows = np.repeat(dofs, nd, axis=1).ravel()
    cols = np.tile(dofs, (1, nd)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(space.n_dofs, space.n_dofs)).tocsr()


def assemble_vector(space: FeSpace, local: np.ndarray, elements: Optional[np.ndarray] = None) -> np.ndarray:
    """Sums element vectors (ne, nd) into a global vector."""
    dofs = space.element_dofs if elements is None else space.element_dofs[elements]
    return np.bincount(dofs.ravel(), weights=local.ravel(), minlength=space.n_dofs)


def expand_components(local: np.ndarray, n_components: int) -> np.ndarray:
    """Scalar element matrices (ne, nlp, nlp) -> block-identity vector matrices (ne, nlp*D, nlp*D)."""
    if n_components == 1:
        return local
    ne, nlp, _ = local.shape
    eye = np.eye(n_components)
    return np.einsum("eab,cd->eacbd", local, eye).reshape(ne, nlp * n_components, nlp * n_components)


# =======================================
# INNER PRODUCTS
# =======================================

@dataclass
class InnerProduct:
    """Gram matrix of (., .)_l over all dofs; SPD on the free dofs."""
    matrix: sp.csr_matrix
    kind: str
    free: np.ndarray

    def free_matrix(self) -> sp.csr_matrix:
        return self.matrix[self.free][:, self.free]

    def dot(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return u.T @ (self.matrix @ v)

    def norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(u @ (self.matrix @ u), 0.0)))

    def gram(self, A: np.ndarray, B: Optional[np.ndarray] = None) -> np.ndarray:
        B = A if B is None else B
        return A.T @ (self.matrix @ B)


def assemble_inner_product(space: FeSpace, kind: str = "H1") -> InnerProduct:
    """
    Assembles the H1 (stiffness + mass) or L2 (mass) inner product.

    :raises DegenerateElementError: element with non-positive Jacobian
    """
    kind = kind.upper()
    if kind not in ("H1", "L2"):
        raise ValueError(f"Unknown inner product kind: {kind}")
    mesh = space.mesh
    pts, w = volume_rule(mesh)
    detJ, dphi, phi = element_geometry(mesh, pts)
    wdet = detJ * w[None, :]
    local = np.einsum("eq,qa,qb->eab", wdet, phi, phi)
    if kind == "H1":
        local = local + np.einsum("eq,eqai,eqbi->eab", wdet, dphi, dphi)
    matrix = assemble_matrix(space, expand_components(local, space.n_components))
    logger.debug(f"[FE] {kind} inner product assembled: {space.n_dofs} dofs, nnz={matrix.nnz}")
    return InnerProduct(matrix=matrix, kind=kind, free=space.free_dofs)


# =======================================
# BOUNDARY QUADRATURE
# =======================================

@dataclass
class BoundaryQuadrature:
    """
    Facet quadrature in the frame of the mesh it was built on: points, weights,
    outward unit normals, and the containing elements with reference locations.
    On an archetype mesh that frame is the reference configuration; deploy() maps
    the points and turns the normals into the boundary measure ratio.
    """
    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    elements: np.ndarray
    local: np.ndarray
    facet: np.ndarray

    def __len__(self) -> int:
        return len(self.weights)


def boundary_quadrature(mesh: Mesh, tag: Union[str, Iterable[str]], n_points: int = 3) -> BoundaryQuadrature:
    """
    Gauss rule on the facets of one or several tags. Normals are the outward unit
    normals of the mesh as given (n = J^-T n_hat, normalized), not of the reference square.

    :raises EmptyTagError: when the tag holds no facets
    """
    if isinstance(tag, str):
        facets = mesh.facets(tag)
    else:
        tag = list(tag)
        facets = mesh.facets_of(tag)
        if len(facets) == 0:
            raise EmptyTagError("+".join(tag))
    return facet_quadrature(mesh, facets, n_points)


def facet_quadrature(mesh: Mesh, facets: np.ndarray, n_points: int = 3) -> BoundaryQuadrature:
    basis = basis_for(mesh)
    dim = mesh.dim
    if dim == 1:
        sides = facets[:, 1]
        local = sides.astype(float)[:, None]
        elements = facets[:, 0]
        N = basis.values(local)
        X = mesh.nodes[mesh.connectivity[elements]]
        points = np.einsum("kai,ka->ki", X, N)
        return BoundaryQuadrature(
            points=points,
            weights=np.ones(len(facets)),
            normals=SIDE_NORMALS[1][sides],
            elements=elements,
            local=local,
            facet=np.arange(len(facets)),
        )

    t, w = _gauss_1d(n_points)
    nf, nq = len(facets), len(t)
    points = np.zeros((nf, nq, 2))
    weights = np.zeros((nf, nq))
    normals = np.zeros((nf, nq, 2))
    local = np.zeros((nf, nq, 2))
    for side in np.unique(facets[:, 1]):
        sel = np.flatnonzero(facets[:, 1] == side)
        ref = side_reference_points(2, int(side), t)
        X = mesh.nodes[mesh.connectivity[facets[sel, 0]]]
        N = basis.values(ref)
        dN = basis.gradients(ref)
        J = np.einsum("kai,naj->knij", X, dN)
        tangent = J @ SIDE_DIRECTIONS_2D[side]
        n_ref = SIDE_NORMALS[2][side]
        normal = np.einsum("knji,j->kni", np.linalg.inv(J), n_ref)
        points[sel] = np.einsum("kai,na->kni", X, N)
        weights[sel] = w[None, :] * np.linalg.norm(tangent, axis=2)
        normals[sel] = normal / np.linalg.norm(normal, axis=2, keepdims=True)
        local[sel] = ref[None, :, :]
    return BoundaryQuadrature(
        points=points.reshape(-1, 2),
        weights=weights.ravel(),
        normals=normals.reshape(-1, 2),
        elements=np.repeat(facets[:, 0], nq),
        local=local.reshape(-1, 2),
        facet=np.repeat(np.arange(nf), nq),
    )


# =======================================
# POINT EVALUATION
# =======================================

def evaluation_matrix(space: FeSpace, elements: np.ndarray, local: np.ndarray) -> sp.csr_matrix:
    """
    Sparse operator mapping a dof vector to its values at located points.
    Row p * D + c holds component c at point p.
    """
    D = space.n_components
    phi = basis_for(space.mesh).values(local)
    nodes = space.mesh.connectivity[elements]
    npts, nlp = phi.shape
    rows = np.broadcast_to(np.arange(npts)[:, None, None] * D + np.arange(D)[None, None, :], (npts, nlp, D))
    cols = nodes[:, :, None] * D + np.arange(D)[None, None, :]
    vals = np.repeat(phi[:, :, None], D, axis=2)
    return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(npts * D, space.n_dofs))


def interpolate(space: FeSpace, field: np.ndarray, points: np.ndarray, strict: bool = True) -> np.ndarray:
    """
    FE field values at physical points, (npts, D).
    Points outside the mesh raise (strict) or evaluate to NaN.
    """
    elements, local = space.mesh.locate(points, strict=strict)
    inside = elements >= 0
    out = np.full((len(elements), space.n_components), np.nan)
    if np.any(inside):
        E = evaluation_matrix(space, elements[inside], local[inside])
        out[inside] = (E @ field).reshape(-1, space.n_components)
    return out


def _gradients_many(basis: LagrangeBasis, local: np.ndarray) -> np.ndarray:
    """Reference gradients at one reference point per evaluation point."""
    if basis.dim == 1:
        _, dl = basis._lagrange_1d(local[:, 0])
        return dl[:, :, None]
    lx, dlx = basis._lagrange_1d(local[:, 0])
    ly, dly = basis._lagrange_1d(local[:, 1])
    gx = (ly[:, :, None] * dlx[:, None, :]).reshape(len(local), -1)
    gy = (dly[:, :, None] * lx[:, None, :]).reshape(len(local), -1)
    return np.stack([gx, gy], axis=2)


def locate_and_interpolate(mesh: Mesh, field: np.ndarray, x: Sequence[float], n_components: int = 1) -> np.ndarray:
    """
    Exact FE evaluation u_h(x) at one physical point.

    :raises OutsideDomainError: carrying the distance to the nearest element
    """
    return interpolate(FeSpace(mesh, n_components), field, np.atleast_2d(np.asarray(x, dtype=float)))[0]


def nodal_interpolant(space: FeSpace, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Dof vector sampling fn(nodes) -> (N_v, D) at the mesh nodes."""
    values = np.asarray(fn(space.mesh.nodes), dtype=float).reshape(space.mesh.n_nodes, space.n_components)
    return values.ravel()


def evaluate_located(
    space: FeSpace,
    field: np.ndarray,
    elements: np.ndarray,
    local: np.ndarray,
    with_gradients: bool = False,
):
    """
    Values (npts, D) and optionally gradients (npts, D, d) at points whose
    containing elements and reference coordinates are already known.
    """
    mesh = space.mesh
    basis = basis_for(mesh)
    D = space.n_components
    coeffs = field[space.element_dofs[elements]].reshape(len(elements), -1, D)
    values = np.einsum("pac,pa->pc", coeffs, basis.values(local))
    if not with_gradients:
        return values, None
    X = mesh.nodes[mesh.connectivity[elements]]
    dN = _gradients_many(basis, local)
    J = np.einsum("pai,paj->pij", X, dN)
    dphi = np.einsum("paj,pji->pai", dN, np.linalg.inv(J))
    return values, np.einsum("pac,pai->pci", coeffs, dphi)
