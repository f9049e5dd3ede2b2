# tests/test_rom_online.py
import numpy as np
import pytest

from modules.components import instantiate
from modules.config import SolverConfig
from modules.errors import NegativeWeightError, Os2Error
from modules.fe_core import evaluate_located, interpolate
from modules.rom_online import (
    ReducedLocalModel,
    assemble_jump_operator,
    assemble_jump_system,
    build_reduced_models,
    initial_state,
    objective_port_weights,
    reference_port_weights,
    run_solver,
    solve_gauss_newton,
    solve_quasi_newton,
    solve_schwarz,
)

N, M = 2, 2


@pytest.fixture
def reduced(trained):
    system = instantiate(trained.library, trained.params[0])
    coupled = build_reduced_models(system, N, M, "hfq", trained.cfg.solver)
    weights, with_jacobian = objective_port_weights(system, "hfq", N, M)
    jump = assemble_jump_system(coupled, weights, with_jacobian)
    return system, coupled, jump


def test_reduced_residual_is_the_projected_full_residual(reduced):
    _, coupled, _ = reduced
    model = coupled.models[0]
    rng = np.random.default_rng(0)
    alpha, beta = 1e-3 * rng.standard_normal(N), 1e-3 * rng.standard_normal(M)
    full = model.form.residual(model.expand(alpha, beta))
    np.testing.assert_allclose(model.residual(alpha, beta), model.Z.T @ full, atol=1e-12)
    np.testing.assert_allclose(model.element_projections(alpha, beta).sum(axis=1), model.residual(alpha, beta),
                               atol=1e-12)


def test_reduced_linearization_matches_finite_differences(reduced):
    _, coupled, _ = reduced
    model = coupled.models[-1]
    rng = np.random.default_rng(1)
    alpha, beta = 1e-3 * rng.standard_normal(N), 1e-3 * rng.standard_normal(M)
    _, Ja, Jb = model.linearize(alpha, beta)
    eps = 1e-6
    for k in range(N):
        e = np.zeros(N)
        e[k] = eps
        fd = (model.residual(alpha + e, beta) - model.residual(alpha - e, beta)) / (2 * eps)
        np.testing.assert_allclose(Ja[:, k], fd, rtol=1e-5, atol=1e-8 * np.abs(Ja).max())
    for k in range(M):
        e = np.zeros(M)
        e[k] = eps
        fd = (model.residual(alpha, beta + e) - model.residual(alpha, beta - e)) / (2 * eps)
        np.testing.assert_allclose(Jb[:, k], fd, rtol=1e-5, atol=1e-8 * np.abs(Jb).max())


def test_port_to_bubble_jacobian(reduced):
    _, coupled, _ = reduced
    model = coupled.models[0]
    beta = np.array([1e-3, -2e-3])
    alpha, _ = model.port_to_bubble(beta)
    J = model.port_to_bubble_jacobian(alpha, beta)
    eps = 1e-6
    v = np.array([0.6, 0.8])
    fd = (model.port_to_bubble(beta + eps * v, alpha)[0] - model.port_to_bubble(beta - eps * v, alpha)[0]) / (2 * eps)
    assert np.linalg.norm(J @ v - fd) <= 1e-4 * max(np.linalg.norm(J @ v), 1e-12)


def test_jump_residual_is_linear_in_the_fields(reduced):
    system, coupled, jump = reduced
    rng = np.random.default_rng(2)
    alphas = [rng.standard_normal(N) for _ in coupled.models]
    betas = [rng.standard_normal(M) for _ in coupled.models]
    direct = sum(B @ m.expand(a, b) for B, m, a, b in zip(jump.operator.blocks, coupled.models, alphas, betas))
    np.testing.assert_allclose(jump.residual(alphas, betas), direct, atol=1e-12)
    assert jump.n_rows == jump.operator.n_rows
    assert set(np.unique(jump.operator.row_component)) <= set(range(system.n_dd))


def test_jump_of_identical_constant_fields_vanishes(trained):
    system = instantiate(trained.library, trained.params[0])
    op = assemble_jump_operator(system, reference_port_weights(system))
    r = sum(B @ np.ones(c.space.n_dofs) for B, c in zip(op.blocks, system))
    np.testing.assert_allclose(r, 0.0, atol=1e-12)


def test_gauss_newton_reduces_the_objective(reduced, trained):
    _, coupled, jump = reduced
    init = initial_state(coupled)
    state, report = solve_gauss_newton(coupled, jump, init, tol=1e-6, maxit=50)
    assert report.converged
    assert report.final_objective <= report.objective_history[0]
    assert np.all(np.diff(report.objective_history) <= 1e-14 * report.objective_history[0])
    for model, a, b in zip(coupled.models, state.alphas, state.betas):
        assert np.linalg.norm(model.residual(a, b)) <= 1e-8 * max(model.residual_scale(), 1.0)


def test_quasi_newton_reaches_the_gauss_newton_minimum(reduced):
    _, coupled, jump = reduced
    init = initial_state(coupled)
    _, gn = solve_gauss_newton(coupled, jump, init, tol=1e-10, maxit=50)
    _, qn = solve_quasi_newton(coupled, jump, init, tol=1e-10, maxit=200)
    f0 = gn.objective_history[0]
    assert qn.final_objective <= gn.final_objective + 1e-6 * f0


def test_schwarz_sweeps(reduced):
    _, coupled, jump = reduced
    state, report = solve_schwarz(coupled, jump, initial_state(coupled), tol=1e-6, maxit=3)
    assert len(report.beta_history) == report.iterations + 1
    assert len(report.step_norms) == report.iterations
    assert len(state.betas) == len(coupled.models)


def test_run_solver_dispatch(reduced, trained):
    _, coupled, jump = reduced
    init = initial_state(coupled)
    _, report = run_solver("gn", coupled, jump, init, trained.cfg.solver)
    assert report.solver == "gn"
    with pytest.raises(ValueError):
        run_solver("cg", coupled, jump, init, SolverConfig())


def test_initial_state_uses_training_means(reduced, trained):
    _, coupled, _ = reduced
    init = initial_state(coupled)
    means = trained.library["int"].coefficient_means
    np.testing.assert_allclose(init.alphas[0], means[0][:N])
    np.testing.assert_allclose(init.betas[0], means[1][:M])
    assert init.alpha.shape == (N * len(coupled.models),)


def test_objective_and_quadrature_modes(trained):
    system = instantiate(trained.library, trained.params[0])
    with pytest.raises(ValueError):
        objective_port_weights(system, "lsq", N, M)
    with pytest.raises(Os2Error):
        objective_port_weights(system, "eq", 3, 3)
    with pytest.raises(Os2Error):
        objective_port_weights(system, "eim", N, 5)
    with pytest.raises(Os2Error):
        build_reduced_models(system, 3, 3, "eq")
    with pytest.raises(ValueError):
        build_reduced_models(system, N, M, "gauss")
    weights, with_jacobian = objective_port_weights(system, "hfq", N, M)
    assert with_jacobian
    assert len(weights) == system.n_dd


def test_reduced_model_rejects_negative_weights(reduced):
    system, coupled, _ = reduced
    comp = system[0]
    Z, W = comp.archetype.basis.truncated(N, M)
    weights = np.ones(comp.space.mesh.n_elements)
    weights[0] = -1.0
    with pytest.raises(NegativeWeightError):
        ReducedLocalModel(comp, Z, W, weights)


def test_jump_objective_equals_direct_port_quadrature(reduced):
    system, coupled, jump = reduced
    rng = np.random.default_rng(5)
    alphas = [1e-2 * rng.standard_normal(N) for _ in coupled.models]
    betas = [1e-2 * rng.standard_normal(M) for _ in coupled.models]
    fields = [m.expand(a, b) for m, a, b in zip(coupled.models, alphas, betas)]

    direct = 0.0
    for i, comp in enumerate(system):
        rho = comp.archetype.port_quadrature.weights * comp.port_jacobian
        bq = comp.archetype.port_quadrature
        own, _ = evaluate_located(comp.space, fields[i], bq.elements, bq.local)
        for q, owners in enumerate(system.owners[i]):
            for j in owners:
                other = interpolate(system[j].space, fields[j], comp.port_points[q:q + 1])[0]
                direct += 0.5 * rho[q] * float(np.sum((own[q] - other) ** 2))
    assert direct > 0.0
    assert abs(jump.objective(alphas, betas) - direct) <= 1e-12 * direct


@pytest.mark.parametrize("index", range(4))
def test_solver_iteration_ordering(trained, index):
    n = m = 4
    system = instantiate(trained.library, trained.params[index])
    coupled = build_reduced_models(system, n, m, "hfq", trained.cfg.solver)
    weights, with_jacobian = objective_port_weights(system, "hfq", n, m)
    jump = assemble_jump_system(coupled, weights, with_jacobian)
    init = initial_state(coupled)
    tol = 1e-6

    _, gn = solve_gauss_newton(coupled, jump, init, tol=tol, maxit=100)
    _, qn = solve_quasi_newton(coupled, jump, init, tol=tol, maxit=200)
    _, os_ = solve_schwarz(coupled, jump, init, tol=tol, maxit=300)

    assert gn.converged and qn.converged and os_.converged
    assert gn.iterations <= 15
    assert gn.iterations < qn.iterations
    assert gn.iterations < os_.iterations
    f0 = gn.objective_history[0]
    for report in (qn, os_):
        assert abs(report.final_objective - gn.final_objective) <= 10 * tol * f0
