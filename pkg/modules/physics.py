# modules/physics.py
"""
Plane-stress neo-Hookean elasticity and 1D linear model problems.

Forms expose element-level kernels (residual vectors and tangents per element)
so that global assembly, weighted assembly and reduced projections share them.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp

from modules.errors import InvertedElementError, NegativeWeightError
from modules.fe_core import (
    FeSpace,
    assemble_matrix,
    assemble_vector,
    basis_for,
    element_geometry,
    facet_quadrature,
    volume_rule,
)
from modules.logger import logger

TRACTION_PATCH_TAG = "neumann-r"
TOP_TRACTION_TAG = "neumann-top"
BAND_EDGES = (1.0 / 3.0, 2.0 / 3.0)


# =======================================
# MATERIAL AND LOADS
# =======================================

def lame_constants(E, nu: float) -> Tuple[np.ndarray, np.ndarray]:
    """Plane-stress Lame constants (lambda1, lambda2) for Young's modulus E."""
    E = np.asarray(E, dtype=float)
    return E * nu / (1.0 - nu ** 2), E / (2.0 * (1.0 + nu))


@dataclass(frozen=True)
class Material:
    E: float
    nu: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.nu < 0.5:
            raise ValueError(f"Poisson ratio must lie in (0, 0.5), got {self.nu}")
        if not self.E > 0.0:
            raise ValueError(f"Young's modulus must be positive, got {self.E}")

    @property
    def lambda1(self) -> float:
        return float(lame_constants(self.E, self.nu)[0])

    @property
    def lambda2(self) -> float:
        return float(lame_constants(self.E, self.nu)[1])


@dataclass(frozen=True)
class MaterialField:
    """Young's moduli on the horizontal bands x2 < 1/3, 1/3 <= x2 < 2/3, x2 >= 2/3."""
    E1: float
    E2: float
    E3: float
    nu: float = 0.3

    def young(self, x2: np.ndarray) -> np.ndarray:
        x2 = np.asarray(x2, dtype=float)
        return np.where(x2 < BAND_EDGES[0], self.E1, np.where(x2 < BAND_EDGES[1], self.E2, self.E3))

    def element_lame(self, centroids: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Element-constant Lame constants from centroid band membership."""
        return lame_constants(self.young(centroids[:, -1]), self.nu)


@dataclass(frozen=True)
class LoadSpec:
    """Traction s on the bottom patches and the top traction recipe scaled by top_scale."""
    s: float = 0.0
    top_scale: float = 1.0

    def patch_traction(self, points: np.ndarray) -> np.ndarray:
        g = np.zeros_like(points)
        g[:, 1] = -self.s
        return g

    def top_traction(self, points: np.ndarray) -> np.ndarray:
        g = np.zeros_like(points)
        g[:, 1] = -4.0 * self.top_scale * points[:, 0] * (1.0 - points[:, 0])
        return g


# =======================================
# CONSTITUTIVE LAW
# =======================================

def _inverse_transpose(F: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    det = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    bad = int(np.count_nonzero(det <= 0.0))
    if bad:
        raise InvertedElementError(bad)
    G = np.empty_like(F)
    G[..., 0, 0] = F[..., 1, 1]
    G[..., 0, 1] = -F[..., 1, 0]
    G[..., 1, 0] = -F[..., 0, 1]
    G[..., 1, 1] = F[..., 0, 0]
    return G / det[..., None, None], det


def piola_and_tangent(F: np.ndarray, lam1, lam2, need_tangent: bool = True):
    """
    First Piola-Kirchhoff stress and its derivative dP_ij/dF_kl, vectorized over leading axes.

    :raises InvertedElementError: if det F <= 0 anywhere
    """
    G, det = _inverse_transpose(F)
    log_j = np.log1p(det - 1.0)
    lam1 = np.asarray(lam1, dtype=float)
    lam2 = np.asarray(lam2, dtype=float)
    P = lam2[..., None, None] * (F - G) + (lam1 * log_j)[..., None, None] * G
    if not need_tangent:
        return P, None
    eye = np.eye(2)
    A = (
        lam2[..., None, None, None, None] * np.einsum("ik,jl->ijkl", eye, eye)
        + (lam2 - lam1 * log_j)[..., None, None, None, None] * np.einsum("...il,...kj->...ijkl", G, G)
        + lam1[..., None, None, None, None] * np.einsum("...ij,...kl->...ijkl", G, G)
    )
    return P, A


def first_piola(F: np.ndarray, mat: Material) -> np.ndarray:
    """P = lambda2 (F - F^-T) + lambda1 log(det F) F^-T."""
    P, _ = piola_and_tangent(np.asarray(F, dtype=float), mat.lambda1, mat.lambda2, need_tangent=False)
    return P


def first_piola_tangent(F: np.ndarray, mat: Material) -> np.ndarray:
    _, A = piola_and_tangent(np.asarray(F, dtype=float), mat.lambda1, mat.lambda2)
    return A


def small_strain_tangent(lam1, lam2) -> np.ndarray:
    """Linear-elastic tensor lambda1 d_ij d_kl + lambda2 (d_ik d_jl + d_il d_jk)."""
    eye = np.eye(2)
    lam1 = np.asarray(lam1, dtype=float)
    lam2 = np.asarray(lam2, dtype=float)
    return (
        lam1[..., None, None, None, None] * np.einsum("ij,kl->ijkl", eye, eye)
        + lam2[..., None, None, None, None] * (np.einsum("ik,jl->ijkl", eye, eye) + np.einsum("il,jk->ijkl", eye, eye))
    )


# =======================================
# VARIATIONAL FORMS
# =======================================

class VariationalForm:
    """
    Residual R(u)_j = sum_k rho_k r_k(u)_j over elements, with element kernels
    provided by subclasses.
    """

    def __init__(self, space: FeSpace):
        self.space = space
        self.mesh = space.mesh
        self.element_dofs = space.element_dofs

    @property
    def n_elements(self) -> int:
        return self.mesh.n_elements

    def gather(self, u: np.ndarray, elements: np.ndarray) -> np.ndarray:
        return u[self.element_dofs[elements]]

    def element_residuals(self, u_el: np.ndarray, elements: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def element_tangents(self, u_el: np.ndarray, elements: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def element_residuals_and_tangents(self, u_el: np.ndarray, elements: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return self.element_residuals(u_el, elements), self.element_tangents(u_el, elements)

    def _active(self, weights: Optional[np.ndarray]) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        if weights is None:
            return np.arange(self.n_elements), None
        weights = np.asarray(weights, dtype=float)
        if len(weights) != self.n_elements:
            raise ValueError(f"Expected {self.n_elements} element weights, got {len(weights)}")
        if np.any(weights < 0.0):
            raise NegativeWeightError(f"Element weights must be non-negative (min {weights.min():.3e})")
        elements = np.flatnonzero(weights > 0.0)
        return elements, weights[elements]

    def residual(self, u: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
        elements, rho = self._active(weights)
        r_el = self.element_residuals(self.gather(u, elements), elements)
        if rho is not None:
            r_el = r_el * rho[:, None]
        return assemble_vector(self.space, r_el, elements)

    def jacobian(self, u: np.ndarray, weights: Optional[np.ndarray] = None) -> sp.csr_matrix:
        elements, rho = self._active(weights)
        K_el = self.element_tangents(self.gather(u, elements), elements)
        if rho is not None:
            K_el = K_el * rho[:, None, None]
        return assemble_matrix(self.space, K_el, elements)

    def residual_and_jacobian(self, u: np.ndarray, weights: Optional[np.ndarray] = None):
        elements, rho = self._active(weights)
        r_el, K_el = self.element_residuals_and_tangents(self.gather(u, elements), elements)
        if rho is not None:
            r_el = r_el * rho[:, None]
            K_el = K_el * rho[:, None, None]
        return assemble_vector(self.space, r_el, elements), assemble_matrix(self.space, K_el, elements)


class NeoHookeanForm(VariationalForm):
    """
    Local form of a deployed component: int P(u) : grad v - int g . v on its Neumann facets.
    Element integrals use the deformed node positions (discretize-then-map).

    :param space: dof space on the deployed mesh
    :param material: band-wise Young's moduli
    :param load: traction data
    :param symmetric_test_gradient: test with the symmetric part of grad v
    """

    def __init__(
        self,
        space: FeSpace,
        material: MaterialField,
        load: LoadSpec,
        symmetric_test_gradient: bool = False,
        load_scale: float = 1.0,
    ):
        super().__init__(space)
        if space.n_components != 2 or self.mesh.dim != 2:
            raise ValueError("Neo-Hookean form needs a 2D vector space")
        self.material = material
        self.load = load
        self.symmetric_test_gradient = symmetric_test_gradient
        self.load_scale = load_scale

        pts, w = volume_rule(self.mesh)
        detJ, self._dphi, _ = element_geometry(self.mesh, pts)
        self._wdet = detJ * w[None, :]
        self.lam1, self.lam2 = material.element_lame(self.mesh.element_centroids())
        self._loads = self._assemble_element_loads()

    def _assemble_element_loads(self) -> np.ndarray:
        nlp = self.mesh.nodes_per_element
        loads = np.zeros((self.n_elements, nlp * 2))
        basis = basis_for(self.mesh)
        for tag, traction in ((TRACTION_PATCH_TAG, self.load.patch_traction), (TOP_TRACTION_TAG, self.load.top_traction)):
            facets = self.mesh.tags.get(tag)
            if facets is None or len(facets) == 0:
                continue
            bq = facet_quadrature(self.mesh, facets)
            phi = basis.values(bq.local)
            g = traction(bq.points)
            contrib = bq.weights[:, None, None] * phi[:, :, None] * g[:, None, :]
            np.add.at(loads, bq.elements, contrib.reshape(len(bq), -1))
        return loads

    def _deformation(self, u_el: np.ndarray, elements: np.ndarray) -> np.ndarray:
        ue = u_el.reshape(len(elements), -1, 2)
        H = np.einsum("eac,eqai->eqci", ue, self._dphi[elements])
        return H + np.eye(2)

    def _stress(self, F: np.ndarray, elements: np.ndarray, need_tangent: bool):
        P, A = piola_and_tangent(F, self.lam1[elements][:, None], self.lam2[elements][:, None], need_tangent)
        if self.symmetric_test_gradient:
            P = 0.5 * (P + np.swapaxes(P, -1, -2))
            if A is not None:
                A = 0.5 * (A + np.swapaxes(A, -4, -3))
        return P, A

    def _residual_from_stress(self, P: np.ndarray, elements: np.ndarray) -> np.ndarray:
        r = np.einsum("eq,eqcj,eqaj->eac", self._wdet[elements], P, self._dphi[elements])
        return r.reshape(len(elements), -1) - self.load_scale * self._loads[elements]

    def _tangent_from_moduli(self, A: np.ndarray, elements: np.ndarray) -> np.ndarray:
        dphi = self._dphi[elements]
        K = np.einsum("eq,eqaj,eqcjdl,eqbl->eacbd", self._wdet[elements], dphi, A, dphi, optimize=True)
        n = K.shape[1] * 2
        return K.reshape(len(elements), n, n)

    def element_residuals(self, u_el: np.ndarray, elements: np.ndarray) -> np.ndarray:
        P, _ = self._stress(self._deformation(u_el, elements), elements, need_tangent=False)
        return self._residual_from_stress(P, elements)

    def element_tangents(self, u_el: np.ndarray, elements: np.ndarray) -> np.ndarray:
        _, A = self._stress(self._deformation(u_el, elements), elements, need_tangent=True)
        return self._tangent_from_moduli(A, elements)

    def element_residuals_and_tangents(self, u_el: np.ndarray, elements: np.ndarray):
        P, A = self._stress(self._deformation(u_el, elements), elements, need_tangent=True)
        return self._residual_from_stress(P, elements), self._tangent_from_moduli(A, elements)

    def with_load_scale(self, load_scale: float) -> "NeoHookeanForm":
        other = object.__new__(type(self))
        other.__dict__.update(self.__dict__)
        other.load_scale = load_scale
        return other


class LinearElasticForm(NeoHookeanForm):
    """Small-strain limit of the neo-Hookean form: P = C : grad u with the tangent at F = I."""

    def _stress(self, F: np.ndarray, elements: np.ndarray, need_tangent: bool):
        C = small_strain_tangent(self.lam1[elements][:, None], self.lam2[elements][:, None])
        C = np.broadcast_to(C, F.shape[:2] + (2, 2, 2, 2))
        H = F - np.eye(2)
        P = np.einsum("eqijkl,eqkl->eqij", C, H)
        return P, C


# =======================================
# 1D LINEAR MODEL PROBLEMS
# =======================================

class Linear1DForm(VariationalForm):
    """
    Residual int kappa u' v' + gamma int u' v + f int v on a 1D Lagrange space.

    u'' = 2 is (kappa, gamma, f) = (1, 0, 2); -u'' + gamma u' = 0 is (1, gamma, 0).
    """

    def __init__(self, space: FeSpace, diffusion: float = 1.0, advection: float = 0.0, source: float = 0.0):
        super().__init__(space)
        if self.mesh.dim != 1 or space.n_components != 1:
            raise ValueError("Linear1DForm needs a scalar 1D space")
        pts, w = volume_rule(self.mesh)
        detJ, dphi, phi = element_geometry(self.mesh, pts)
        wdet = detJ * w[None, :]
        d = dphi[..., 0]
        self._K = (
            diffusion * np.einsum("eq,eqa,eqb->eab", wdet, d, d)
            + advection * np.einsum("eq,qa,eqb->eab", wdet, phi, d)
        )
        self._f = source * np.einsum("eq,qa->ea", wdet, phi)
        logger.debug(f"[PHYSICS] 1D form: kappa={diffusion}, gamma={advection}, f={source}, {self.n_elements} elements")

    def element_residuals(self, u_el: np.ndarray, elements: np.ndarray) -> np.ndarray:
        return np.einsum("eab,eb->ea", self._K[elements], u_el) + self._f[elements]

    def element_tangents(self, u_el: np.ndarray, elements: np.ndarray) -> np.ndarray:
        return self._K[elements].copy()


def poisson_1d_form(space: FeSpace) -> Linear1DForm:
    """u'' = 2."""
    return Linear1DForm(space, diffusion=1.0, advection=0.0, source=2.0)


def advdiff_1d_form(space: FeSpace, gamma: float) -> Linear1DForm:
    """-u'' + gamma u' = 0."""
    return Linear1DForm(space, diffusion=1.0, advection=gamma, source=0.0)
