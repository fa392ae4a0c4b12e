"""Experiment configuration: one YAML file, schema-validated, unknown keys
rejected.  CLI flags override individual fields one-to-one."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import yaml

from .errors import ConfigError

SCHEMA_VERSION = 1

# emission profile used by the bundled default experiment: a sharp head and
# a graded synonym tail so distillation has real covering work to do
HEAD_TAIL_EMISSION = (0.62, 0.12, 0.06, 0.04, 0.03, 0.022, 0.018, 0.015,
                      0.0135, 0.011, 0.010, 0.009, 0.008, 0.007, 0.006, 0.0105)


@dataclass
class ToySection:
    teacher: tuple = (0.4, 0.3, 0.2, 0.1)
    k: int = 2
    learning_rate: float = 0.5
    epochs: int = 500
    init: str = "uniform"
    init_scale: float = 0.5
    sweep_seeds: int = 20
    sweep_learning_rate: float = 1.0
    sweep_init_scale: float = 0.5


@dataclass
class GenSection:
    source_class_sizes: tuple = (2,) * 6
    target_group_sizes: tuple = (16,) * 6
    emissions: tuple = (HEAD_TAIL_EMISSION,) * 6
    class_map: tuple = tuple(range(6))
    length_range: tuple = (4, 8)
    noise: float = 0.03
    n_pairs: int = 120


@dataclass
class ModelSection:
    hidden_dim: int = 12
    init_scale: float = 0.1
    teacher: str = "oracle"  # oracle | trained
    teacher_hidden_dim: int = 24
    teacher_pretrain_epochs: int = 600


@dataclass
class TrainSection:
    lambda_weight: float = 0.8
    modes: tuple = ("kd", "ka", "jsd")
    jsd_weight: float = 0.5
    topk: int | None = None
    learning_rate: float = 2e-3
    pretrain_learning_rate: float = 5e-3
    adam_betas: tuple = (0.9, 0.98)
    adam_eps: float = 1e-8
    epochs: int = 60
    batch_size: int = 32
    pretrain_epochs: int = 300
    checkpoint_every: int = 20


@dataclass
class BeamSection:
    beam_size: int = 6
    length_penalty: float = 1.0
    max_length: int = 12


@dataclass
class MetricsSection:
    probe_count: int = 200
    history_k: int = 16
    sweep_ks: tuple = ()
    dialog_pairs: int = 2
    dialog_top_m: int = 10


@dataclass
class AnalyzeSection:
    grid_points: int = 1024
    grid_lo: float = -6.0
    grid_hi: float = 6.0


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    out_dir: str = "results"
    toy: ToySection = field(default_factory=ToySection)
    gen: GenSection = field(default_factory=GenSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    beam: BeamSection = field(default_factory=BeamSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    analyze: AnalyzeSection = field(default_factory=AnalyzeSection)


_SECTIONS = {
    "toy": ToySection,
    "gen": GenSection,
    "model": ModelSection,
    "train": TrainSection,
    "beam": BeamSection,
    "metrics": MetricsSection,
    "analyze": AnalyzeSection,
}

_TUPLE_FIELDS = {
    "teacher", "source_class_sizes", "target_group_sizes", "emissions",
    "class_map", "length_range", "adam_betas", "modes", "sweep_ks",
}


def _coerce(section: Any, key: str, value: Any, path: str) -> Any:
    if key in _TUPLE_FIELDS:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}.{key} must be a list")
        if key == "emissions":
            return tuple(tuple(row) for row in value)
        return tuple(value)
    current = getattr(section, key)
    if isinstance(current, bool) or value is None or current is None:
        return value
    if isinstance(current, int) and not isinstance(value, int):
        raise ConfigError(f"{path}.{key} must be an integer, got {value!r}")
    if isinstance(current, float) and not isinstance(value, (int, float)):
        raise ConfigError(f"{path}.{key} must be a number, got {value!r}")
    if isinstance(current, str) and not isinstance(value, str):
        raise ConfigError(f"{path}.{key} must be a string, got {value!r}")
    return type(current)(value) if not isinstance(current, str) else value


def _apply_section(section: Any, data: dict, path: str) -> None:
    known = set(section.__dataclass_fields__)
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown key {path}.{key} (known: {sorted(known)})")
        setattr(section, key, _coerce(section, key, value, path))


def load_config(path) -> ExperimentConfig:
    """Load and validate a YAML experiment config."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}")
    return parse_config(raw if raw is not None else {})


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    config = ExperimentConfig()
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    for key, value in raw.items():
        if key == "schema_version":
            continue
        elif key == "seed":
            if not isinstance(value, int):
                raise ConfigError("seed must be an integer")
            config.seed = value
        elif key == "out_dir":
            if not isinstance(value, str):
                raise ConfigError("out_dir must be a string")
            config.out_dir = value
        elif key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key} must be a mapping")
            _apply_section(getattr(config, key), value, key)
        else:
            raise ConfigError(
                f"unknown top-level key {key!r} "
                f"(known: {['schema_version', 'seed', 'out_dir'] + sorted(_SECTIONS)})")
    _validate(config)
    return config


def _validate(config: ExperimentConfig) -> None:
    t = config.train
    if not 0.0 <= t.lambda_weight <= 1.0:
        raise ConfigError("train.lambda_weight must lie in [0, 1]")
    for mode in t.modes:
        if mode not in ("kd", "ka", "jsd"):
            raise ConfigError(f"train.modes entries must be kd/ka/jsd, got {mode!r}")
    if config.model.teacher not in ("oracle", "trained"):
        raise ConfigError("model.teacher must be 'oracle' or 'trained'")
    if config.toy.init not in ("uniform", "random_logits"):
        raise ConfigError("toy.init must be 'uniform' or 'random_logits'")
    if not 0.0 <= config.gen.noise < 1.0:
        raise ConfigError("gen.noise must lie in [0, 1)")


def default_config_yaml() -> str:
    """The bundled default experiment as a YAML document."""
    config = ExperimentConfig()
    doc = {
        "schema_version": SCHEMA_VERSION,
        "seed": config.seed,
        "out_dir": config.out_dir,
    }
    for name, section in (("toy", config.toy), ("gen", config.gen),
                          ("model", config.model), ("train", config.train),
                          ("beam", config.beam), ("metrics", config.metrics),
                          ("analyze", config.analyze)):
        doc[name] = {k: (list(v) if isinstance(v, tuple) else v)
                     for k, v in section.__dict__.items()}
        if name == "gen":
            doc[name]["emissions"] = [list(row) for row in section.emissions]
    return yaml.safe_dump(doc, sort_keys=False)
