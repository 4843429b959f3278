"""Run configuration for the command line.

One YAML file describes a whole run: data paths and schema, model size or
preset, optimization settings, evaluation and anomaly parameters. Unknown
keys are rejected with their dotted path so typos fail loudly instead of
silently falling back to defaults. Command-line flags arrive as dotted
``section.key`` overrides and win over the file.

A single top-level ``seed`` governs initialization, the validation split,
batch shuffling, and clustering restarts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .anomaly import AnomalyConfig
from .data import DEFAULT_COLUMNS, SchemaConfig
from .errors import ConfigError
from .model import PRESETS, ModelConfig
from .training import TrainRunConfig


@dataclass
class DataSection:
    input: str | None = None  # raw delimited transaction log
    store: str | None = None  # funnel container path
    delimiter: str = ","
    timestamp_format: str | None = None  # strptime pattern; None reads ISO-8601
    min_sessions: int = 3
    holdout_fraction: float = 0.30
    columns: dict = field(default_factory=lambda: dict(DEFAULT_COLUMNS))


@dataclass
class ModelSection:
    """Preset name plus optional explicit overrides; None means unset."""

    preset: str | None = None
    sce_layers: int | None = None
    sce_cells: int | None = None
    sce_bidirectional: bool | None = None
    fbe_layers: int | None = None
    fbe_cells: int | None = None
    fbe_bidirectional: bool | None = None
    nsd_cell_sizes: list | None = None
    item_dim: int | None = None
    user_dim: int | None = None
    decode_max_items: int | None = None
    tte_hidden: int | None = None
    item_embeddings: str | None = None  # warm-start table path


@dataclass
class TrainSection:
    epochs: int = 30
    batch_max: int = 128
    learning_rate: float = 0.001
    clip_norm: float = 5.0
    objective: str = "next-basket"
    scenario: str = "cold"
    tte_loss_kind: str = "mae"
    early_stop_patience: int = 3
    early_stop_delta: float = 1e-4
    checkpoint_every: int = 0


@dataclass
class EvaluateSection:
    k_max: int = 10


@dataclass
class AnomalySection:
    min_sessions: int = 3
    k_min: int = 2
    k_max: int = 10
    threshold: float = 3.0
    decode_items: int = 10


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str | None = None  # explicit output directory; None -> stamped under runs_root
    runs_root: str = "runs"
    workers: int = 1  # reserved; execution is currently sequential
    checkpoint: str | None = None  # model file consumed by evaluate/predict/anomaly
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    anomaly: AnomalySection = field(default_factory=AnomalySection)

    def echo(self) -> dict:
        """Fully resolved values, for the reproducibility echo."""
        return dataclasses.asdict(self)


_SECTIONS = ("data", "model", "train", "evaluate", "anomaly")

# leaf name -> accepted types (bool checked before int: bool is an int subclass)
_LEAF_TYPES = {
    bool: (bool,),
    int: (int,),
    float: (int, float),
    str: (str,),
}


def _expected_types(section, key):
    hints = {
        (type(section).__name__, f.name): f.type for f in dataclasses.fields(type(section))
    }
    return hints[(type(section).__name__, key)]


def _assign(section, key: str, value, path: str) -> None:
    if key not in {f.name for f in dataclasses.fields(type(section))}:
        raise ConfigError(f"unknown config key '{path}'")
    hint = _expected_types(section, key)
    hint = hint if isinstance(hint, str) else str(hint)
    if value is None:
        if "None" not in hint:
            raise ConfigError(f"'{path}' must not be null")
        setattr(section, key, None)
        return
    if key == "columns":
        if not isinstance(value, dict):
            raise ConfigError(f"'{path}' must be a mapping of schema roles to column names")
        merged = dict(DEFAULT_COLUMNS)
        for role, column in value.items():
            if role not in DEFAULT_COLUMNS:
                raise ConfigError(f"unknown config key '{path}.{role}'")
            if not isinstance(column, str) or not column:
                raise ConfigError(f"'{path}.{role}' must be a non-empty column name")
            merged[role] = column
        setattr(section, key, merged)
        return
    if key == "nsd_cell_sizes":
        if not isinstance(value, (list, tuple)) or not value \
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"'{path}' must be a non-empty list of integers")
        setattr(section, key, list(value))
        return
    for base, accepted in _LEAF_TYPES.items():
        if base.__name__ in hint.replace("| None", "").strip():
            if base is not bool and isinstance(value, bool):
                raise ConfigError(f"'{path}' must be {base.__name__}, got boolean")
            if not isinstance(value, accepted):
                raise ConfigError(f"'{path}' must be {base.__name__}, got {type(value).__name__}")
            setattr(section, key, base(value))
            return
    raise ConfigError(f"cannot assign '{path}'")


def _merge_mapping(config: RunConfig, mapping: dict) -> None:
    for key, value in mapping.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"'{key}' must be a mapping")
            section = getattr(config, key)
            for sub, subval in value.items():
                _assign(section, str(sub), subval, f"{key}.{sub}")
        else:
            _assign(config, str(key), value, str(key))


def apply_override(config: RunConfig, dotted: str, raw: str) -> None:
    """Apply one ``section.key=value`` flag; values parse as YAML scalars."""
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    if "." in dotted:
        section_name, _, key = dotted.partition(".")
        if section_name not in _SECTIONS:
            raise ConfigError(f"unknown config key '{dotted}'")
        if section_name == "data" and key.startswith("columns."):
            role = key.split(".", 1)[1]
            _assign(config.data, "columns", {role: value}, "data.columns")
            return
        _assign(getattr(config, section_name), key, value, dotted)
    else:
        _assign(config, dotted, value, dotted)


def load_run_config(path=None, overrides=None) -> RunConfig:
    """Build a RunConfig from an optional YAML file plus flag overrides."""
    config = RunConfig()
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must contain a mapping at top level")
        _merge_mapping(config, loaded)
    for dotted, raw in (overrides or []):
        apply_override(config, dotted, raw)
    if config.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {config.workers}")
    return config


def schema_config(config: RunConfig) -> SchemaConfig:
    return SchemaConfig(
        delimiter=config.data.delimiter,
        timestamp_format=config.data.timestamp_format,
        columns=dict(config.data.columns),
    )


def model_config(config: RunConfig, vocab_size: int, user_count: int) -> ModelConfig:
    """Resolve the model section against a realized vocabulary."""
    section = config.model
    overrides = {}
    for name in ("sce_layers", "sce_cells", "sce_bidirectional", "fbe_layers", "fbe_cells",
                 "fbe_bidirectional", "item_dim", "user_dim", "decode_max_items", "tte_hidden"):
        value = getattr(section, name)
        if value is not None:
            overrides[name] = value
    if section.nsd_cell_sizes is not None:
        overrides["nsd_cell_sizes"] = tuple(section.nsd_cell_sizes)
        overrides["nsd_layers"] = len(section.nsd_cell_sizes)
    if section.preset is not None:
        if section.preset not in PRESETS:
            valid = ", ".join(sorted(PRESETS))
            raise ConfigError(f"unknown preset '{section.preset}'; valid presets: {valid}")
        return PRESETS[section.preset](vocab_size, user_count, **overrides)
    return ModelConfig(vocab_size=vocab_size, user_count=user_count, **overrides)


def train_run_config(config: RunConfig) -> TrainRunConfig:
    t = config.train
    return TrainRunConfig(
        epochs=t.epochs, batch_max=t.batch_max, learning_rate=t.learning_rate,
        clip_norm=t.clip_norm, seed=config.seed, objective=t.objective,
        scenario=t.scenario, min_sessions=config.data.min_sessions,
        tte_loss_kind=t.tte_loss_kind, early_stop_patience=t.early_stop_patience,
        early_stop_delta=t.early_stop_delta, checkpoint_every=t.checkpoint_every,
    )


def anomaly_config(config: RunConfig) -> AnomalyConfig:
    a = config.anomaly
    return AnomalyConfig(
        min_sessions=a.min_sessions, k_min=a.k_min, k_max=a.k_max,
        threshold=a.threshold, seed=config.seed, decode_items=a.decode_items,
    )
