"""
Experiment configuration.

One YAML or JSON file describes a whole experiment:

    dataset:   DatasetSpec fields
    train:     TrainConfig fields (with nested sharpening, augment, architecture)
    sweep:     optional {parameter, values}
    seeds:     list of seeds, one run per seed
    output_dir: where runs are written

`--override key.path=value` edits the loaded dict before it is turned
into dataclasses; values are parsed with YAML scalar rules.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Type, TypeVar

import yaml

from fracture_distill.data.augment import AugmentConfig
from fracture_distill.data.synthetic import DatasetSpec
from fracture_distill.errors import ConfigError
from fracture_distill.model import ArchitectureSpec
from fracture_distill.sharpening import SharpeningConfig
from fracture_distill.trainer import TrainConfig

T = TypeVar("T")

SWEEP_PARAMETERS = ("center_t", "max_strength_a0", "positive_fraction")

_NESTED_TRAIN = {
    "sharpening": SharpeningConfig,
    "augment": AugmentConfig,
    "architecture": ArchitectureSpec,
}


def load_config(config_path: Path) -> Dict[str, Any]:
    """Load configuration from a YAML or JSON file."""
    config_path = Path(config_path)
    if not config_path.exists():
        raise ConfigError(f"config file not found: {config_path}")

    with open(config_path, encoding="utf-8") as f:
        try:
            if config_path.suffix in [".yaml", ".yml"]:
                data = yaml.safe_load(f) or {}
            elif config_path.suffix == ".json":
                data = json.load(f)
            else:
                raise ConfigError(f"unsupported config format '{config_path.suffix}' (use .yaml or .json)")
        except (yaml.YAMLError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot parse {config_path}: {exc}") from exc

    if not isinstance(data, dict):
        raise ConfigError(f"{config_path} must hold a mapping at top level")
    return data


def to_plain(value: Any) -> Any:
    """Dataclasses, tuples and paths as JSON/YAML-safe builtins."""
    if is_dataclass(value) and not isinstance(value, type):
        return {f.name: to_plain(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, Mapping):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    return value


def config_hash(config: Any) -> str:
    """First 12 hex digits of SHA-256 over the canonical JSON of `config`."""
    canonical = json.dumps(to_plain(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def _build(cls: Type[T], data: Optional[Mapping[str, Any]], section: str) -> T:
    if data is None:
        return cls()
    if isinstance(data, cls):
        return data
    if not isinstance(data, Mapping):
        raise ConfigError(f"'{section}' must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"invalid '{section}': {exc}") from exc


def train_config_from_dict(data: Optional[Mapping[str, Any]]) -> TrainConfig:
    values = dict(data or {})
    for key, cls in _NESTED_TRAIN.items():
        if key in values:
            values[key] = _build(cls, values[key], f"train.{key}")
    return _build(TrainConfig, values, "train")


@dataclass(frozen=True)
class SweepSpec:
    """One swept parameter and its values."""

    parameter: str
    values: Tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(
                f"cannot sweep '{self.parameter}'. Choose from: {', '.join(SWEEP_PARAMETERS)}"
            )
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        for value in self.values:
            if self.parameter == "center_t" and not 0.0 < value < 1.0:
                raise ConfigError(f"center_t sweep value {value} outside (0, 1)")
            if self.parameter == "max_strength_a0" and value < 1.0:
                raise ConfigError(f"max_strength_a0 sweep value {value} below 1")
            if self.parameter == "positive_fraction" and not 0.0 <= value <= 1.0:
                raise ConfigError(f"positive_fraction sweep value {value} outside [0, 1]")


@dataclass(frozen=True)
class ExperimentConfig:
    """Dataset, training, optional sweep and seeds of one experiment."""

    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: Optional[SweepSpec] = None
    seeds: Tuple[int, ...] = (0,)
    output_dir: str = "runs"

    def __post_init__(self) -> None:
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"duplicate seeds in {list(self.seeds)}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")
        sweep = data.get("sweep")
        seeds = data.get("seeds", (0,))
        if isinstance(seeds, int):
            seeds = (seeds,)
        return cls(
            dataset=_build(DatasetSpec, data.get("dataset"), "dataset"),
            train=train_config_from_dict(data.get("train")),
            sweep=None if sweep is None else _build(SweepSpec, sweep, "sweep"),
            seeds=tuple(seeds),
            output_dir=str(data.get("output_dir", "runs")),
        )

    def to_dict(self) -> Dict[str, Any]:
        return to_plain(self)

    @property
    def hash(self) -> str:
        return config_hash(self)

    def for_seed(self, seed: int) -> "ExperimentConfig":
        """Single-seed copy; the seed drives both data generation and training."""
        return dataclasses.replace(
            self,
            dataset=dataclasses.replace(self.dataset, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
            seeds=(seed,),
        )

    def with_value(self, parameter: str, value: float) -> "ExperimentConfig":
        """Copy with one sweep parameter set."""
        if parameter == "positive_fraction":
            return dataclasses.replace(
                self, dataset=dataclasses.replace(self.dataset, positive_fraction=value)
            )
        if parameter in ("center_t", "max_strength_a0"):
            sharpening = dataclasses.replace(self.train.sharpening, **{parameter: value})
            return dataclasses.replace(
                self, train=dataclasses.replace(self.train, sharpening=sharpening)
            )
        raise ConfigError(f"cannot set sweep parameter '{parameter}'")


def apply_overrides(config: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """
    Apply dotted `key=value` overrides to a config dict (in a copy).

    Example: ["train.sharpening.max_strength_a0=8", "seeds=[0, 1, 2]"]
    """
    result = json.loads(json.dumps(config))
    for item in overrides:
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"override must look like key=value, got '{item}'")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value '{raw}': {exc}") from exc
        node = result
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            if not isinstance(child, dict):
                raise ConfigError(f"override '{key}': '{part}' is not a section")
            node = child
        node[parts[-1]] = value
    return result


def resolve_config(
    config_path: Optional[Path] = None,
    overrides: Sequence[str] = (),
    seeds: Sequence[int] = (),
) -> ExperimentConfig:
    """File (or defaults) + overrides + --seed flags -> ExperimentConfig."""
    data = load_config(config_path) if config_path is not None else {}
    data = apply_overrides(data, overrides)
    config = ExperimentConfig.from_dict(data)
    if seeds:
        config = dataclasses.replace(config, seeds=tuple(seeds))
    return config


def sample_config() -> Dict[str, Any]:
    """Desk-scale experiment configuration used by `fracture-distill config`."""
    config = ExperimentConfig(
        train=TrainConfig(learning_rate=1e-3, batch_size=16, epochs_pretrain=10, epochs_distill=15),
        seeds=(0, 1, 2),
    )
    data = config.to_dict()
    data["sweep"] = {"parameter": "max_strength_a0", "values": [1.0, 4.0, 8.0, 16.0]}
    return data


def snapshot(config: ExperimentConfig) -> Dict[str, Any]:
    """Resolved configuration plus its hash, as written into run directories."""
    return {"config": config.to_dict(), "config_hash": config.hash}

