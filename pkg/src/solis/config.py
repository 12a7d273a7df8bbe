"""Experiment configuration: one JSON document describing data, networks and training."""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .exceptions import ConfigurationError
from .systems import SystemSpec
from .trainer import TrainConfig


@dataclass
class DatasetConfig:
    n_train: int = 6
    n_test: int = 3
    n_meas: int = 60
    n_coll: int = 256
    sigma: float = 0.0
    latent_velocity: bool = False

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 0:
            raise ConfigurationError("dataset.n_train must be >= 1 and dataset.n_test >= 0")
        if self.n_meas < 2:
            raise ConfigurationError("dataset.n_meas must be >= 2")
        if self.n_coll < 4 * self.n_meas:
            raise ConfigurationError("dataset.n_coll must be >= 4 * dataset.n_meas")
        if self.sigma < 0:
            raise ConfigurationError("dataset.sigma must be non-negative")


@dataclass
class SolutionConfig:
    hidden: tuple = (64, 64)
    gru_hidden: int = 16
    context_points: int = 32
    rff_features: int = 0
    rff_sigma: float = 1.0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not self.hidden or min(self.hidden) < 1 or self.gru_hidden < 1:
            raise ConfigurationError("solution_network widths must be positive")
        if self.rff_features < 0 or self.rff_sigma <= 0:
            raise ConfigurationError("solution_network.rff_features >= 0 and rff_sigma > 0 required")


@dataclass
class ParameterConfig:
    hidden: tuple = (32, 32)
    augment: bool = False
    n_experts: int = 0
    theta_scale: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.theta_scale = tuple(float(s) for s in self.theta_scale)
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigurationError("parameter_network.hidden widths must be positive")
        if self.n_experts < 0:
            raise ConfigurationError("parameter_network.n_experts must be >= 0")
        if len(self.theta_scale) != 3:
            raise ConfigurationError("parameter_network.theta_scale needs three entries")


def _section(cls, name, data):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigurationError(f"{name} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"{name}: unknown field(s) {unknown}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigurationError(f"{name}: {exc}") from None


@dataclass
class ExperimentConfig:
    system: SystemSpec
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    solution_network: SolutionConfig = field(default_factory=SolutionConfig)
    parameter_network: ParameterConfig = field(default_factory=ParameterConfig)
    seed: int = 0

    SECTIONS = ("system", "dataset", "train", "solution_network", "parameter_network", "seed")

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigurationError("configuration must be a JSON object")
        unknown = sorted(set(d) - set(cls.SECTIONS))
        if unknown:
            raise ConfigurationError(f"unknown top-level field(s) {unknown}")
        if "system" not in d:
            raise ConfigurationError("system: required field missing")
        try:
            system = SystemSpec.from_dict(d["system"])
        except TypeError as exc:
            raise ConfigurationError(f"system: {exc}") from None
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigurationError("seed must be a non-negative integer")
        train = _section(TrainConfig, "train", d.get("train"))
        train.seed = seed
        return cls(system, _section(DatasetConfig, "dataset", d.get("dataset")), train,
                   _section(SolutionConfig, "solution_network", d.get("solution_network")),
                   _section(ParameterConfig, "parameter_network", d.get("parameter_network")),
                   seed)

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def with_seed(self, seed):
        d = self.to_dict()
        d["seed"] = seed
        return ExperimentConfig.from_dict(d)

    def to_dict(self):
        return {"system": self.system.to_dict(), "dataset": asdict(self.dataset),
                "train": self.train.to_dict(), "solution_network": _listify(asdict(self.solution_network)),
                "parameter_network": _listify(asdict(self.parameter_network)), "seed": self.seed}

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def estimator_kwargs(self):
        s, p = self.solution_network, self.parameter_network
        return {"sol_hidden": s.hidden, "gru_hidden": s.gru_hidden,
                "context_points": s.context_points, "rff_features": s.rff_features,
                "rff_sigma": s.rff_sigma, "param_hidden": p.hidden, "augment": p.augment,
                "n_experts": p.n_experts, "theta_scale": p.theta_scale}


def _listify(d):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


BUNDLED = ("lti", "duffing", "vanderpol", "twotank")


def bundled_config_path(name):
    """Path of a desk-scale experiment file shipped with the package."""
    if name not in BUNDLED:
        raise ConfigurationError(f"no bundled config {name!r}; choose from {BUNDLED}")
    return Path(__file__).with_name("configs") / f"{name}.json"


def bundled_config(name):
    return ExperimentConfig.load(bundled_config_path(name))
