# tests/test_physics.py
import numpy as np
import pytest

from modules.errors import InvertedElementError, NegativeWeightError
from modules.fe_core import FeSpace, nodal_interpolant
from modules.mesh import interval_mesh, structured_quad_mesh
from modules.physics import (
    LinearElasticForm,
    LoadSpec,
    Material,
    MaterialField,
    NeoHookeanForm,
    advdiff_1d_form,
    first_piola,
    first_piola_tangent,
    lame_constants,
    piola_and_tangent,
    poisson_1d_form,
    small_strain_tangent,
)


def _small_block():
    xs = np.linspace(0.0, 1.0, 3)

    def classify(side, mid):
        if side == 2:
            return "neumann-top"
        if side == 0 and 0.25 < mid[0] < 0.75:
            return "neumann-r"
        return None

    mesh = structured_quad_mesh(xs, xs, degree=2, classify=classify)
    return FeSpace(mesh, 2)


def test_lame_constants():
    lam1, lam2 = lame_constants(26.0, 0.3)
    assert lam1 == pytest.approx(26.0 * 0.3 / 0.91)
    assert lam2 == pytest.approx(10.0)


def test_material_validation():
    with pytest.raises(ValueError):
        Material(E=10.0, nu=0.5)
    with pytest.raises(ValueError):
        Material(E=-1.0)
    assert Material(E=26.0).lambda2 == pytest.approx(10.0)


def test_material_bands():
    field = MaterialField(30.0, 20.0, 10.0)
    np.testing.assert_allclose(field.young(np.array([0.1, 0.5, 0.9])), [30.0, 20.0, 10.0])


def test_piola_vanishes_at_identity():
    mat = Material(E=25.0)
    np.testing.assert_allclose(first_piola(np.eye(2), mat), 0.0, atol=1e-14)


def test_piola_tangent_matches_finite_differences():
    mat = Material(E=25.0)
    F = np.array([[1.05, 0.1], [-0.03, 0.97]])
    A = first_piola_tangent(F, mat)
    eps = 1e-6
    for k in range(2):
        for l in range(2):
            dF = np.zeros((2, 2))
            dF[k, l] = eps
            fd = (first_piola(F + dF, mat) - first_piola(F - dF, mat)) / (2 * eps)
            np.testing.assert_allclose(A[:, :, k, l], fd, rtol=1e-6, atol=1e-7)


def test_tangent_at_identity_is_small_strain_tangent():
    mat = Material(E=25.0)
    np.testing.assert_allclose(
        first_piola_tangent(np.eye(2), mat), small_strain_tangent(mat.lambda1, mat.lambda2), atol=1e-12
    )


def test_inverted_deformation_raises():
    F = np.array([[-1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(InvertedElementError):
        piola_and_tangent(F, 1.0, 1.0)


@pytest.mark.parametrize("symmetric", [False, True])
def test_neohookean_jacobian_matches_finite_differences(symmetric):
    space = _small_block()
    form = NeoHookeanForm(space, MaterialField(27.0, 15.0, 12.0), LoadSpec(s=0.5, top_scale=1.0),
                          symmetric_test_gradient=symmetric)
    rng = np.random.default_rng(0)
    u = 0.01 * rng.standard_normal(space.n_dofs)
    v = rng.standard_normal(space.n_dofs)
    Jv = form.jacobian(u) @ v
    eps = 1e-6
    fd = (form.residual(u + eps * v) - form.residual(u - eps * v)) / (2 * eps)
    assert np.linalg.norm(Jv - fd) <= 1e-6 * np.linalg.norm(Jv)

    r, J = form.residual_and_jacobian(u)
    np.testing.assert_allclose(r, form.residual(u))
    np.testing.assert_allclose((J @ v), Jv)


def test_linear_elastic_tangent_equals_neohookean_at_rest():
    space = _small_block()
    material, load = MaterialField(27.0, 15.0, 12.0), LoadSpec(s=0.5)
    zero = np.zeros(space.n_dofs)
    K_lin = LinearElasticForm(space, material, load).jacobian(zero).toarray()
    K_nh = NeoHookeanForm(space, material, load).jacobian(zero).toarray()
    np.testing.assert_allclose(K_lin, K_nh, atol=1e-10)


def test_residual_at_rest_is_the_load():
    space = _small_block()
    form = NeoHookeanForm(space, MaterialField(27.0, 15.0, 12.0), LoadSpec(s=0.0, top_scale=1.0))
    r = form.residual(np.zeros(space.n_dofs))
    # -int g . v over the top: g2 = -4 x (1 - x), total 2/3
    assert r[1::2].sum() == pytest.approx(2.0 / 3.0)
    assert r[0::2].sum() == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(form.with_load_scale(0.5).residual(np.zeros(space.n_dofs)), 0.5 * r)


def test_element_weights():
    space = _small_block()
    form = NeoHookeanForm(space, MaterialField(27.0, 15.0, 12.0), LoadSpec(s=0.5))
    u = 0.01 * np.random.default_rng(2).standard_normal(space.n_dofs)
    np.testing.assert_allclose(form.residual(u, np.ones(form.n_elements)), form.residual(u))
    w = np.array([2.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(form.residual(u, w), 2.0 * form.residual(u, np.array([1.0, 0.0, 0.0, 0.0])))
    with pytest.raises(NegativeWeightError):
        form.residual(u, np.array([1.0, -1.0, 1.0, 1.0]))
    with pytest.raises(ValueError):
        form.residual(u, np.ones(3))


def test_neohookean_requires_vector_space(unit_square):
    with pytest.raises(ValueError):
        NeoHookeanForm(FeSpace(unit_square, 1), MaterialField(27.0, 15.0, 12.0), LoadSpec())


def test_poisson_1d_residual_vanishes_for_exact_solution():
    space = FeSpace(interval_mesh(np.linspace(-1.0, 0.25, 6)), 1)
    form = poisson_1d_form(space)
    u = nodal_interpolant(space, lambda x: x[:, 0] ** 2)
    r = form.residual(u)
    np.testing.assert_allclose(r[1:-1], 0.0, atol=1e-12)


def test_advdiff_1d_constants_are_in_the_kernel():
    space = FeSpace(interval_mesh(np.linspace(-0.25, 1.0, 6)), 1)
    form = advdiff_1d_form(space, gamma=3.0)
    np.testing.assert_allclose(form.residual(np.ones(space.n_dofs)), 0.0, atol=1e-12)
    K = form.jacobian(np.zeros(space.n_dofs)).toarray()
    assert not np.allclose(K, K.T)
