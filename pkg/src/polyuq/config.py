"""Experiment configuration files (YAML) with strict schema checking."""
import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .exceptions import ConfigError

__all__ = [
    "EXPERIMENTS",
    "MeshConfig",
    "CoefficientConfig",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "config_digest",
    "bundled_config",
]

EXPERIMENTS = ("qoi-convergence", "mc-convergence", "mlmc-convergence", "samples-table",
               "cost-accuracy", "validate-regions")

TOLERANCE_KEYS = {"slope", "h1_slope", "l2_slope", "qoi_slope", "dominance", "pointwise", "qoi"}


@dataclass
class MeshConfig:
    """Mesh source.

    ``source`` is ``cartesian`` (nested tensor grids, optionally graded by
    ``(e^{a s} - 1) / (e^a - 1)`` per axis with ``grading: [a_x, a_y]``, or per
    order as ``{p: [a_x, a_y]}``),
    ``voronoi`` (Lloyd-smoothed Voronoi meshes with ``seeds`` cells each) or
    ``files`` (a list of mesh files, coarse to fine).
    """

    source: str = "cartesian"
    n0: int = 2
    grading: list = None
    files: list = field(default_factory=list)
    seeds: list = field(default_factory=list)


@dataclass
class CoefficientConfig:
    """Random coefficient model.

    ``smooth-kl`` is the one-mode smooth benchmark on the unit square,
    ``constant`` a deterministic ``alpha``; ``regions`` uses the bundled
    strata (or user ``polygons``) with ``regime`` or explicit ``ranges``.
    """

    model: str = "smooth-kl"
    alpha: float = 1.0
    regime: str = "uniform"
    ranges: list = None
    polygons: list = None


@dataclass
class ExperimentConfig:
    experiment: str
    p: list = field(default_factory=lambda: [1])
    min_level: object = 1
    max_level: object = 5
    mc_max_level: object = None
    seed: int = 0
    epsilon: float = 1e-10
    target: str = "solution"
    multiplier: object = 1.0
    max_count: int = 10 ** 9
    rel_tol: float = 1e-10
    solver: str = "cg"
    preconditioner: str = "jacobi"
    threads: int = 1
    regimes: list = field(default_factory=lambda: ["uniform", "heterogeneous"])
    tolerances: dict = field(default_factory=dict)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    coefficient: CoefficientConfig = field(default_factory=CoefficientConfig)
    output: str = "results"

    def per_p(self, name, p):
        """Value of a setting that may be given per order as a ``{p: value}`` mapping."""
        value = getattr(self, name)
        if isinstance(value, dict):
            if p not in value:
                raise ConfigError(f"{name} has no entry for p={p}")
            return value[p]
        return value

    def tolerance(self, name, default):
        return float(self.tolerances.get(name, default))

    def to_dict(self):
        return dataclasses.asdict(self)


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(map(str, unknown))}")
    return cls(**data)


def _int_list(value, name):
    if isinstance(value, int) and not isinstance(value, bool):
        value = [value]
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{name} must be an integer or a non-empty list of integers")
    for v in value:
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ConfigError(f"{name} entries must be positive integers, got {v!r}")
    return value


def _level_spec(value, name, ps, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, dict):
        out = {}
        for k, v in value.items():
            if isinstance(k, str) and k.isdigit():
                k = int(k)
            out[k] = _level_spec(v, f"{name}[{k}]", ps)
        missing = [p for p in ps if p not in out]
        if missing:
            raise ConfigError(f"{name} has no entry for p={missing[0]}")
        return out
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(f"{name} must be a positive integer or a per-p mapping, got {value!r}")
    return value


def _number(value, name, positive=True):
    if isinstance(value, dict):
        return {int(k): _number(v, f"{name}[{k}]", positive) for k, v in value.items()}
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if positive and not value > 0:
        raise ConfigError(f"{name} must be positive, got {value}")
    return value


def _grading_pair(value, name):
    if not (isinstance(value, list) and len(value) == 2):
        raise ConfigError(f"{name} must be a pair [a_x, a_y]")
    return [_number(g, name, positive=False) for g in value]


def parse_config(data, overrides=None):
    """Validate a configuration mapping and return an :class:`ExperimentConfig`."""
    if data is None:
        data = {}
    data = dict(data)
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    if not isinstance(data.get("experiment"), str):
        raise ConfigError("config needs an 'experiment' name")
    if data["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {data['experiment']!r}; "
                          f"choose from {', '.join(EXPERIMENTS)}")
    mesh = _build(MeshConfig, data.pop("mesh", {}) or {}, "mesh")
    coef = _build(CoefficientConfig, data.pop("coefficient", {}) or {}, "coefficient")
    cfg = _build(ExperimentConfig, data, "config")
    cfg.mesh, cfg.coefficient = mesh, coef
    cfg.p = _int_list(cfg.p, "p")
    cfg.min_level = _level_spec(cfg.min_level, "min_level", cfg.p)
    cfg.max_level = _level_spec(cfg.max_level, "max_level", cfg.p)
    cfg.mc_max_level = _level_spec(cfg.mc_max_level, "mc_max_level", cfg.p, allow_none=True)
    for p in cfg.p:
        if cfg.per_p("min_level", p) > cfg.per_p("max_level", p):
            raise ConfigError(f"min_level exceeds max_level for p={p}")
    if isinstance(cfg.seed, bool) or not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {cfg.seed!r}")
    if isinstance(cfg.threads, bool) or not isinstance(cfg.threads, int) or cfg.threads < 1:
        raise ConfigError(f"threads must be a positive integer, got {cfg.threads!r}")
    cfg.epsilon = _number(cfg.epsilon, "epsilon")
    cfg.rel_tol = _number(cfg.rel_tol, "rel_tol")
    cfg.multiplier = _number(cfg.multiplier, "multiplier")
    cfg.max_count = int(_number(cfg.max_count, "max_count"))
    if cfg.target not in ("solution", "qoi"):
        raise ConfigError(f"target must be 'solution' or 'qoi', got {cfg.target!r}")
    if cfg.solver not in ("cg", "direct"):
        raise ConfigError(f"solver must be 'cg' or 'direct', got {cfg.solver!r}")
    if cfg.preconditioner not in ("jacobi", "mean"):
        raise ConfigError(f"preconditioner must be 'jacobi' or 'mean', got {cfg.preconditioner!r}")
    if not isinstance(cfg.tolerances, dict):
        raise ConfigError("tolerances must be a mapping")
    unknown = sorted(set(cfg.tolerances) - TOLERANCE_KEYS)
    if unknown:
        raise ConfigError(f"unknown tolerance key(s): {', '.join(unknown)}")
    cfg.tolerances = {k: _number(v, f"tolerances.{k}") for k, v in cfg.tolerances.items()}
    if mesh.source not in ("cartesian", "voronoi", "files"):
        raise ConfigError(f"mesh.source must be cartesian, voronoi or files, got {mesh.source!r}")
    if isinstance(mesh.grading, dict):
        mesh.grading = {int(k): _grading_pair(v, f"mesh.grading[{k}]")
                        for k, v in mesh.grading.items()}
        missing = [p for p in cfg.p if p not in mesh.grading]
        if missing:
            raise ConfigError(f"mesh.grading has no entry for p={missing[0]}")
    elif mesh.grading is not None:
        mesh.grading = _grading_pair(mesh.grading, "mesh.grading")
    if mesh.source == "files" and not mesh.files:
        raise ConfigError("mesh.source 'files' needs a non-empty mesh.files list")
    if mesh.source == "voronoi":
        mesh.seeds = _int_list(mesh.seeds, "mesh.seeds")
    if coef.model not in ("smooth-kl", "constant", "regions"):
        raise ConfigError(f"coefficient.model must be smooth-kl, constant or regions, "
                          f"got {coef.model!r}")
    if not isinstance(cfg.regimes, list) or not cfg.regimes:
        raise ConfigError("regimes must be a non-empty list")
    return cfg


def load_config(path, overrides=None):
    """Read and validate a YAML configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return parse_config(data, overrides)


def config_digest(cfg):
    """SHA-256 of the canonical YAML dump of a validated configuration."""
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def bundled_config(name):
    """Path of a configuration file shipped with the package."""
    from importlib.resources import files
    path = files("polyuq") / "configs" / f"{name}.yaml"
    if not path.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return Path(str(path))
