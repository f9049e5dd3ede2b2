# tests/test_hf_solvers.py
import numpy as np
import pytest

from modules.components import GlobalField, GlobalParameter, instantiate
from modules.config import SolverConfig
from modules.fe_core import FeSpace, interpolate
from modules.hf_solvers import (
    FullLocalModel,
    NewtonConfig,
    newton_solve,
    solve_benchmark_monolithic,
    solve_hf_cb,
)
from modules.mesh import interval_mesh
from modules.metrics import background_grid
from modules.physics import poisson_1d_form
from modules.rom_online import (
    CoefficientState,
    CoupledModel,
    ReducedLocalModel,
    assemble_jump_system,
    port_to_bubble,
    reference_port_weights,
    solve_gauss_newton,
)


def test_newton_config_validation():
    with pytest.raises(ValueError):
        NewtonConfig(atol=0.0)
    with pytest.raises(ValueError):
        NewtonConfig(backtrack_factor=1.0)
    cfg = NewtonConfig.from_solver(SolverConfig(newton_maxit=7))
    assert cfg.maxit == 7


def test_newton_on_a_linear_problem_takes_one_step():
    mesh = interval_mesh(np.linspace(-1.0, 1.0, 9))
    space = FeSpace(mesh, 1)
    space.constrain(np.array([0, mesh.n_nodes - 1]))
    u0 = np.zeros(space.n_dofs)
    u0[[0, -1]] = 1.0
    result = newton_solve(poisson_1d_form(space), u0, space.free_dofs, NewtonConfig())
    assert result.iterations == 1
    # u'' = 2 with u(+-1) = 1 is u = x^2
    np.testing.assert_allclose(result.u, mesh.nodes[:, 0] ** 2, atol=1e-12)


def test_monolithic_benchmark(coarse_cfg):
    param = GlobalParameter(2, 27.0, 15.0, 12.0, 0.7)
    sol = solve_benchmark_monolithic(coarse_cfg.geometry, param, h=0.1, solver=coarse_cfg.solver)
    assert sol.iterations >= 1
    assert sol.history[-1] <= sol.history[0]
    u = sol.u.reshape(-1, 2)
    dirichlet = sol.mesh.tag_nodes("dir")
    symmetry = sol.mesh.tag_nodes("symmetry")
    np.testing.assert_allclose(u[dirichlet], 0.0)
    np.testing.assert_allclose(u[symmetry, 0], 0.0)
    # the top traction pushes down
    top = interpolate(sol.space, sol.u, np.array([[0.5, 1.0]]))[0]
    assert top[1] < 0.0


def test_full_local_jacobian_matches_finite_differences(coarse_system):
    model = FullLocalModel(coarse_system[0])
    rng = np.random.default_rng(0)
    beta = 1e-3 * rng.standard_normal(model.n_beta)
    v = rng.standard_normal(model.n_beta)
    alpha, _ = model.port_to_bubble(beta)
    J = model.port_to_bubble_jacobian(alpha, beta)
    eps = 1e-6
    plus = port_to_bubble(model, beta + eps * v, alpha)
    minus = port_to_bubble(model, beta - eps * v, alpha)
    fd = (plus - minus) / (2 * eps)
    assert np.linalg.norm(J @ v - fd) <= 1e-4 * np.linalg.norm(J @ v)
    assert np.linalg.norm(model.residual(alpha, beta)) <= 1e-8 * model.residual_scale()


def test_hf_cb_matches_the_monolithic_solution(coarse_cfg, coarse_library):
    param = GlobalParameter(2, 27.0, 15.0, 12.0, 0.7)
    system = instantiate(coarse_library, param)
    sol = solve_hf_cb(system, coarse_cfg.solver)

    assert sol.report.converged
    assert sol.report.iterations >= 1
    assert sol.objective < sol.report.objective_history[0]
    for model_residual in sol.local_residuals:
        assert model_residual <= 1e-6
    assert len(sol.fields) == system.n_dd
    for comp, u in zip(system, sol.fields):
        np.testing.assert_allclose(u[comp.space.constrained], 0.0)

    mono = solve_benchmark_monolithic(coarse_cfg.geometry, param, h=coarse_cfg.mesh.h_monolithic,
                                      solver=coarse_cfg.solver)
    points = background_grid(system, n_cells=8).points
    u_cb = GlobalField(system, sol.fields)(points)
    u_mono = interpolate(mono.space, mono.u, points)
    scale = np.max(np.linalg.norm(u_mono, axis=1))
    assert scale > 0.0
    assert np.max(np.linalg.norm(u_cb - u_mono, axis=1)) <= 0.1 * scale


def test_unreduced_gauss_newton_reproduces_hf_cb(coarse_cfg, coarse_system):
    cfg = coarse_cfg.solver
    models = []
    for comp in coarse_system:
        full = FullLocalModel(comp, cfg)
        identity = np.eye(comp.space.n_dofs)
        models.append(ReducedLocalModel(comp, identity[:, full.bubble], identity[:, full.port], None, cfg))
    coupled = CoupledModel(coarse_system, models)
    jump = assemble_jump_system(coupled, reference_port_weights(coarse_system))
    init = CoefficientState([np.zeros(m.n_alpha) for m in models], [np.zeros(m.n_beta) for m in models])
    state, report = solve_gauss_newton(coupled, jump, init, cfg.tol, cfg.maxit, cfg.use_damping, cfg.max_halvings)

    hf = solve_hf_cb(coarse_system, cfg)
    assert report.converged and hf.report.converged
    reference = hf.state.beta
    assert np.linalg.norm(state.beta - reference) <= 1e-8 * np.linalg.norm(reference)
    np.testing.assert_allclose(state.alpha, hf.state.alpha, rtol=0.0, atol=1e-8 * np.abs(hf.state.alpha).max())
