# tests/test_config.py
import json

import pytest

from modules.config import ConfigManager, ExperimentConfig, GeometryConfig
from modules.errors import GeometryError, ParameterBoxError


def _write(tmp_path, data, name="exp.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def test_shipped_configurations_load():
    desk = ConfigManager().load("configs/desk.json")
    assert desk.name == "desk"
    assert desk.parameters.q_a == [2, 3, 4]
    assert desk.parameters.E1 == (25.0, 30.0)
    assert desk.geometry.delta == pytest.approx(0.03)
    full = ConfigManager().load("configs/full.json")
    assert max(full.parameters.q_a) == 7


def test_partial_document_uses_defaults(tmp_path, monkeypatch):
    monkeypatch.delenv("OS2_WORKERS", raising=False)
    monkeypatch.delenv("OS2_ARTIFACTS", raising=False)
    cfg = ConfigManager().load(_write(tmp_path, {"online": {"m_list": [2, 4], "n_factor": 2}}))
    assert cfg.name == "exp"
    assert cfg.online.nm_pairs == [(4, 2), (8, 4)]
    assert cfg.solver == ExperimentConfig().solver
    assert cfg.geometry.l_r == pytest.approx(0.06)


@pytest.mark.parametrize("section, error", [
    ({"geometry": {"delta_ratio": 1.5}}, GeometryError),
    ({"geometry": {"d": 0.2}}, GeometryError),
    ({"geometry": {"nu": 0.5}}, GeometryError),
    ({"parameters": {"q_a": [1, 2]}}, ParameterBoxError),
    ({"parameters": {"E1": [30.0, 25.0]}}, ParameterBoxError),
    ({"mesh": {"h_internal": 0.0}}, GeometryError),
])
def test_invalid_documents(tmp_path, section, error):
    with pytest.raises(error):
        ConfigManager().load(_write(tmp_path, section))


def test_geometry_must_fit_the_largest_configuration():
    GeometryConfig().validate(7)
    with pytest.raises(GeometryError):
        GeometryConfig(d=0.14).validate(7)


def test_environment_overrides(tmp_path, monkeypatch):
    path = _write(tmp_path, {})
    monkeypatch.setenv("OS2_WORKERS", "7")
    monkeypatch.setenv("OS2_ARTIFACTS", str(tmp_path / "art"))
    cfg = ConfigManager().load(path)
    assert cfg.training.workers == 7
    assert cfg.paths.artifacts == str(tmp_path / "art")
    monkeypatch.setenv("OS2_WORKERS", "many")
    assert ConfigManager().load(path).training.workers == ExperimentConfig().training.workers


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        ConfigManager().load(str(tmp_path / "nope.json"))


def test_resolve_path(tmp_path):
    manager = ConfigManager()
    manager.load(_write(tmp_path, {}), base_dir=str(tmp_path))
    assert manager.resolve_path("reports") == str(tmp_path / "reports")
    assert manager.resolve_path(str(tmp_path / "x")) == str(tmp_path / "x")
