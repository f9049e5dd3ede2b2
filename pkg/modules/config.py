"""
Centralized configuration management for the os2 toolkit.

One JSON document per experiment (configs/desk.json by default,
configs/full.json for the full-scale study) with nested sections:
- geometry: component dimensions (d, overlap, traction patch width)
- mesh: element sizes per archetype and for the monolithic reference
- parameters: parameter boxes of the benchmark
- training / solver / hyper_reduction / online: stage settings
- paths: artifact, report and archive folders
"""

import json
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from modules.errors import GeometryError, ParameterBoxError
from modules.logger import logger
from modules.utils import validate_interval, validate_positive


# =======================================
# CONFIGURATION DATA CLASSES
# =======================================

@dataclass
class DataPaths:
    """Output folders (relative paths resolve against the project root)."""
    artifacts: str = "artifacts"
    reports: str = "reports"
    archive: str = "archive"


@dataclass
class GeometryConfig:
    """Component dimensions of the benchmark."""
    d: float = 0.12
    delta_ratio: float = 0.25
    l_r_ratio: float = 0.5
    q_ref: int = 4
    nu: float = 0.3

    @property
    def delta(self) -> float:
        return self.delta_ratio * self.d

    @property
    def l_r(self) -> float:
        return self.l_r_ratio * self.d

    @property
    def height(self) -> float:
        return 2.0 * self.d

    def validate(self, q_max: int) -> None:
        if not 0.0 < self.delta < self.d:
            raise GeometryError(f"overlap delta={self.delta} must satisfy 0 < delta < d={self.d}")
        if not 0.0 < self.l_r < self.d:
            raise GeometryError(f"patch width l_r={self.l_r} must satisfy 0 < l_r < d={self.d}")
        if self.height > 1.0 / 3.0 + 1e-12:
            raise GeometryError(f"component height 2d={self.height} exceeds the bottom band (1/3)")
        if q_max * self.d + self.delta >= 1.0:
            raise GeometryError(f"{q_max} internal components of width d={self.d} do not fit in the unit domain")
        if not 0.0 < self.nu < 0.5:
            raise GeometryError(f"Poisson ratio nu={self.nu} must lie in (0, 0.5)")


@dataclass
class MeshConfig:
    """Target element sizes (structured P2 quads)."""
    h_internal: float = 0.03
    h_external: float = 0.05
    h_monolithic: float = 0.03
    degree: int = 2
    background_cells: int = 50


@dataclass
class ParameterBoxes:
    """Parameter boxes of the benchmark."""
    E1: Tuple[float, float] = (25.0, 30.0)
    E2: Tuple[float, float] = (10.0, 20.0)
    E3: Tuple[float, float] = (10.0, 20.0)
    s: Tuple[float, float] = (0.4, 1.0)
    q_a: List[int] = field(default_factory=lambda: [2, 3, 4])

    def validate(self) -> None:
        for name in ("E1", "E2", "E3", "s"):
            low, high = getattr(self, name)
            ok, msg = validate_interval(name, low, high)
            if not ok:
                raise ParameterBoxError(msg)
        if not self.q_a or min(self.q_a) < 2 or max(self.q_a) > 7:
            raise ParameterBoxError(f"q_a values must lie in 2..7 (got {self.q_a})")


@dataclass
class TrainingConfig:
    n_train: int = 20
    n_test: int = 8
    seed_train: int = 0
    seed_test: int = 1
    workers: int = 4


@dataclass
class SolverConfig:
    """Online and HF-CB solver settings."""
    tol: float = 1e-6
    maxit: int = 100
    damping: bool = True
    max_halvings: int = 10
    plain_gauss_newton: bool = False
    qn_memory: int = 10
    newton_atol: float = 1e-12
    newton_rtol: float = 1e-10
    newton_maxit: int = 30
    backtrack_factor: float = 0.5
    max_backtracks: int = 20
    load_steps: int = 4
    local_rtol: float = 1e-12
    local_maxit: int = 30
    symmetric_test_gradient: bool = False

    @property
    def use_damping(self) -> bool:
        return self.damping and not self.plain_gauss_newton


@dataclass
class HyperReductionConfig:
    tol_eq: float = 1e-10
    tol_eq_p: float = 1e-10
    seed: int = 0
    nnls_cap_factor: int = 10


@dataclass
class OnlineConfig:
    """Sweep settings for the online study."""
    m_list: List[int] = field(default_factory=lambda: [2, 4, 8, 16])
    n_factor: int = 1
    solvers: List[str] = field(default_factory=lambda: ["gn"])
    quadratures: List[str] = field(default_factory=lambda: ["hfq", "eq"])
    objectives: List[str] = field(default_factory=lambda: ["hfq", "eq"])
    speedup_ndd: List[int] = field(default_factory=lambda: [3, 5])
    speedup_nm: int = 8

    @property
    def nm_pairs(self) -> List[Tuple[int, int]]:
        return [(self.n_factor * m, m) for m in self.m_list]


@dataclass
class ExperimentConfig:
    """Complete experiment configuration."""
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    parameters: ParameterBoxes = field(default_factory=ParameterBoxes)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    hyper_reduction: HyperReductionConfig = field(default_factory=HyperReductionConfig)
    online: OnlineConfig = field(default_factory=OnlineConfig)
    paths: DataPaths = field(default_factory=DataPaths)
    name: str = "desk"

    def validate(self) -> None:
        self.parameters.validate()
        self.geometry.validate(max(self.parameters.q_a))
        for name in ("h_internal", "h_external", "h_monolithic"):
            ok, msg = validate_positive(name, getattr(self.mesh, name))
            if not ok:
                raise GeometryError(msg)
        if self.mesh.degree not in (1, 2):
            raise GeometryError(f"mesh degree must be 1 or 2 (got {self.mesh.degree})")
        for name in ("tol", "newton_atol", "newton_rtol", "local_rtol"):
            ok, msg = validate_positive(name, getattr(self.solver, name))
            if not ok:
                raise ValueError(msg)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# =======================================
# CONFIGURATION MANAGER
# =======================================

class ConfigManager:
    """
    Centralized configuration manager.
    Loads and validates one experiment document.
    """

    def __init__(self):
        self.experiment: Optional[ExperimentConfig] = None
        self._base_dir: Optional[str] = None
        self._path: Optional[str] = None

    def load(self, path: Optional[str] = None, base_dir: Optional[str] = None) -> ExperimentConfig:
        """
        Load an experiment configuration file.

        :param path: Config file (absolute, or relative to base_dir); defaults to configs/desk.json
        :param base_dir: Base directory (defaults to parent of modules/)
        :return: The validated ExperimentConfig
        """
        if base_dir is None:
            base_dir = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
        self._base_dir = base_dir
        self._path = path or os.path.join("configs", "desk.json")

        data = self._load_json(self._path)
        experiment = ExperimentConfig(
            geometry=self._load_geometry_config(data),
            mesh=self._load_mesh_config(data),
            parameters=self._load_parameter_boxes(data),
            training=self._load_training_config(data),
            solver=self._load_solver_config(data),
            hyper_reduction=self._load_hyper_reduction_config(data),
            online=self._load_online_config(data),
            paths=DataPaths(**data.get("paths", {})),
            name=data.get("name", os.path.splitext(os.path.basename(self._path))[0]),
        )
        self._apply_env_overrides(experiment)
        experiment.validate()
        self.experiment = experiment

        logger.info(f"[CONFIG] Experiment '{experiment.name}' loaded from {self._path}")
        return experiment

    def _load_json(self, relative_path: str) -> Dict[str, Any]:
        """Load a JSON file (absolute path or relative to the base directory)."""
        full_path = relative_path if os.path.isabs(relative_path) else os.path.join(self._base_dir, relative_path)
        if not os.path.exists(full_path) and os.path.exists(relative_path):
            full_path = relative_path
        try:
            with open(full_path, "r", encoding="utf-8") as f:
                return json.load(f)
        except FileNotFoundError:
            logger.error(f"[CONFIG] File not found: {relative_path}")
            raise
        except json.JSONDecodeError as e:
            logger.error(f"[CONFIG] Error parsing {relative_path}: {e}")
            raise

    def _load_geometry_config(self, data: Dict[str, Any]) -> GeometryConfig:
        return GeometryConfig(**data.get("geometry", {}))

    def _load_mesh_config(self, data: Dict[str, Any]) -> MeshConfig:
        return MeshConfig(**data.get("mesh", {}))

    def _load_parameter_boxes(self, data: Dict[str, Any]) -> ParameterBoxes:
        section = dict(data.get("parameters", {}))
        for name in ("E1", "E2", "E3", "s"):
            if name in section:
                section[name] = tuple(float(v) for v in section[name])
        return ParameterBoxes(**section)

    def _load_training_config(self, data: Dict[str, Any]) -> TrainingConfig:
        return TrainingConfig(**data.get("training", {}))

    def _load_solver_config(self, data: Dict[str, Any]) -> SolverConfig:
        return SolverConfig(**data.get("solver", {}))

    def _load_hyper_reduction_config(self, data: Dict[str, Any]) -> HyperReductionConfig:
        return HyperReductionConfig(**data.get("hyper_reduction", {}))

    def _load_online_config(self, data: Dict[str, Any]) -> OnlineConfig:
        return OnlineConfig(**data.get("online", {}))

    def _apply_env_overrides(self, experiment: ExperimentConfig) -> None:
        """Environment overrides from .env (loaded by the logger module)."""
        workers = os.getenv("OS2_WORKERS")
        if workers:
            try:
                experiment.training.workers = max(1, int(workers))
                logger.info(f"[CONFIG] OS2_WORKERS override: {experiment.training.workers}")
            except ValueError:
                logger.warning(f"[CONFIG] Ignoring invalid OS2_WORKERS={workers!r}")
        artifacts = os.getenv("OS2_ARTIFACTS")
        if artifacts:
            experiment.paths.artifacts = artifacts
            logger.info(f"[CONFIG] OS2_ARTIFACTS override: {artifacts}")

    def resolve_path(self, relative_path: str) -> str:
        """Resolve a configured folder against the project root."""
        if os.path.isabs(relative_path):
            return relative_path
        base = self._base_dir or os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
        return os.path.join(base, relative_path)


# =======================================
# GLOBAL CONFIG INSTANCE
# =======================================

# Create single global instance
CONFIG = ConfigManager()

# Auto-load on import
try:
    CONFIG.load()
except Exception as e:
    logger.error(f"[CONFIG] Failed to load configuration: {e}")
    # Don't raise - the CLI loads an explicit --config anyway
