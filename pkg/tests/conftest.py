# tests/conftest.py
import os

os.environ.setdefault("OS2_LOG_TO_FILE", "false")

from types import SimpleNamespace

import numpy as np
import pytest

from modules.components import GlobalParameter, build_library, instantiate
from modules.config import ExperimentConfig, MeshConfig, OnlineConfig, ParameterBoxes, TrainingConfig
from modules.mesh import structured_quad_mesh
from modules.training import build_bases, draw_parameters, harvest, project_coefficients

SIDE_NAMES = ("bottom", "right", "top", "left")


def side_classifier(side, mid):
    return SIDE_NAMES[side]


def make_coarse_cfg() -> ExperimentConfig:
    """Benchmark geometry on very coarse meshes, Q_a in {2, 3}."""
    return ExperimentConfig(
        mesh=MeshConfig(h_internal=0.06, h_external=0.2, h_monolithic=0.1, degree=2, background_cells=12),
        parameters=ParameterBoxes(q_a=[2, 3]),
        training=TrainingConfig(n_train=4, n_test=2, seed_train=0, seed_test=1, workers=1),
        online=OnlineConfig(m_list=[2], n_factor=1, solvers=["gn"], quadratures=["hfq", "eq"],
                            objectives=["hfq", "eq", "eim"], speedup_ndd=[3], speedup_nm=2),
        name="coarse",
    )


@pytest.fixture
def unit_square():
    """4 x 4 P2 quads on the unit square with one tag per side."""
    xs = np.linspace(0.0, 1.0, 5)
    return structured_quad_mesh(xs, xs, degree=2, classify=side_classifier)


@pytest.fixture
def coarse_cfg():
    return make_coarse_cfg()


@pytest.fixture
def coarse_library(coarse_cfg):
    return build_library(coarse_cfg)


@pytest.fixture
def coarse_system(coarse_library):
    return instantiate(coarse_library, GlobalParameter(2, 27.0, 15.0, 12.0, 0.7))


@pytest.fixture(scope="session")
def trained():
    """Library with HF-CB snapshots, POD bases (n, m <= 4) and projected coefficients."""
    cfg = make_coarse_cfg()
    library = build_library(cfg)
    params = draw_parameters(cfg.parameters, cfg.training.n_train, cfg.training.seed_train)
    snapshots = harvest(library, params, cfg.solver)
    build_bases(library, snapshots, 4, 4)
    projected = project_coefficients(library, snapshots)
    return SimpleNamespace(cfg=cfg, library=library, params=params, snapshots=snapshots, projected=projected)


@pytest.fixture(scope="session")
def nested_run():
    """Coarse meshes, 12 training configurations, (n, m) in {2, 4, 8}, HF-CB test solutions."""
    from modules.pipeline import run_offline, solve_test_set

    cfg = make_coarse_cfg()
    cfg.training.n_train = 12
    cfg.online.m_list = [2, 4, 8]
    cfg.online.objectives = ["hfq", "eim"]
    offline = run_offline(cfg)
    _, hf_solutions = solve_test_set(offline.library, cfg)
    return SimpleNamespace(cfg=cfg, offline=offline, hf=hf_solutions)
