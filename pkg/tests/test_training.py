# tests/test_training.py
import numpy as np
import pytest
import scipy.sparse as sp

from modules.config import ParameterBoxes
from modules.errors import ConfigurationMismatchError
from modules.fe_core import InnerProduct
from modules.training import ReducedBasisPair, draw_parameters, pod


def _euclidean(N):
    return InnerProduct(sp.identity(N, format="csr"), "L2", np.arange(N))


def test_draws_are_reproducible_and_inside_the_boxes():
    boxes = ParameterBoxes(q_a=[2, 3, 4])
    a = draw_parameters(boxes, 10, seed=0)
    b = draw_parameters(boxes, 10, seed=0)
    c = draw_parameters(boxes, 10, seed=1)
    assert a == b
    assert a != c
    for p in a:
        assert p.q_a in boxes.q_a
        assert boxes.E1[0] <= p.E1 <= boxes.E1[1]
        assert boxes.E2[0] <= p.E2 <= boxes.E2[1]
        assert boxes.E3[0] <= p.E3 <= boxes.E3[1]
        assert boxes.s[0] <= p.s <= boxes.s[1]
    # prefixes do not depend on n
    assert draw_parameters(boxes, 3, seed=0) == a[:3]


def test_pod_recovers_singular_values_and_optimal_error():
    rng = np.random.default_rng(0)
    U, _ = np.linalg.qr(rng.standard_normal((40, 5)))
    V, _ = np.linalg.qr(rng.standard_normal((8, 5)))
    s = np.array([10.0, 5.0, 1.0, 0.1, 0.01])
    data = U @ np.diag(s) @ V.T
    inner = _euclidean(40)

    modes, sigma = pod(data, inner, 3)
    assert modes.shape == (40, 3)
    np.testing.assert_allclose(sigma[:5], s, rtol=1e-6)
    np.testing.assert_allclose(inner.gram(modes), np.eye(3), atol=1e-10)
    residual = data - modes @ inner.gram(modes, data)
    assert np.sum(residual ** 2) == pytest.approx(np.sum(s[3:] ** 2), rel=1e-6)


def test_pod_caps_at_numerical_rank():
    rng = np.random.default_rng(1)
    data = np.outer(rng.standard_normal(20), rng.standard_normal(6))
    modes, _ = pod(data, _euclidean(20), 4)
    assert modes.shape == (20, 1)
    empty, sigma = pod(np.zeros((20, 0)), _euclidean(20), 2)
    assert empty.shape == (20, 0) and sigma.size == 0


def test_basis_truncation():
    pair = ReducedBasisPair(np.zeros((10, 3)), np.zeros((10, 2)), np.ones(3), np.ones(2))
    Z, W = pair.truncated(2, 1)
    assert Z.shape == (10, 2) and W.shape == (10, 1)
    with pytest.raises(ConfigurationMismatchError):
        pair.truncated(2, 3)


# =======================================
# ON THE TRAINED COARSE LIBRARY
# =======================================

def test_snapshot_counts(trained):
    q_total = sum(p.q_a for p in trained.params)
    assert trained.snapshots.count("int") == q_total
    assert trained.snapshots.count("ext") == len(trained.params)
    assert trained.snapshots.labels() == ["ext", "int"]


def test_snapshot_split(trained):
    for label in ("int", "ext"):
        arch = trained.library[label]
        U = trained.snapshots.fields(label)
        Ub, Up = trained.snapshots.bubble[label], trained.snapshots.port[label]
        np.testing.assert_allclose(Ub + Up, U)
        np.testing.assert_allclose(Ub[arch.port_dofs], 0.0, atol=1e-14)
        np.testing.assert_allclose(Up[arch.port_dofs], U[arch.port_dofs])


def test_bases_are_orthonormal(trained):
    for arch in trained.library:
        Z, W = arch.basis.Z, arch.basis.W
        np.testing.assert_allclose(arch.inner.gram(Z), np.eye(Z.shape[1]), atol=1e-8)
        np.testing.assert_allclose(arch.inner.gram(W), np.eye(W.shape[1]), atol=1e-8)
        assert np.all(np.diff(arch.basis.sigma_bubble) <= 1e-12)
        # bubble modes vanish on the port, port modes are discrete-harmonic
        np.testing.assert_allclose(Z[arch.port_dofs], 0.0, atol=1e-10)
        orth = (arch.inner.matrix @ W)[arch.bubble_dofs]
        assert np.linalg.norm(orth) <= 1e-8 * max(1.0, np.linalg.norm(arch.inner.matrix @ W))


def test_projected_coefficients(trained):
    for label in ("int", "ext"):
        samples = trained.projected[label]
        arch = trained.library[label]
        assert len(samples) == trained.snapshots.count(label)
        assert samples.alphas.shape[1] == arch.basis.n
        assert samples.betas.shape[1] == arch.basis.m
        means = arch.coefficient_means
        np.testing.assert_allclose(means[0], samples.alphas.mean(axis=0))
        np.testing.assert_allclose(means[1], samples.betas.mean(axis=0))
    assert set(trained.projected["int"].configs) <= set(range(len(trained.params)))
