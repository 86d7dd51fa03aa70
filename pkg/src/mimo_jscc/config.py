"""Experiment configuration: a strict key = value text format.

Unknown keys are errors, the version key is mandatory, and every config has a
canonical serialization whose hash identifies it in metrics rows, so any CSV
row can be regenerated from (config hash, seed).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

import numpy as np

from .channel import ArrayGeometry, ClusterConfig
from .codec import CodecSpec, TrainingConfig


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    source: str = "synthetic"       # "synthetic" or "cifar"
    path: str = ""                  # cifar binary batch, when source == "cifar"
    train_count: int = 2048
    test_count: int = 512
    image_size: int = 8
    complexity_mix: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.source not in ("synthetic", "cifar"):
            raise ConfigError(f"unknown dataset source {self.source!r}")
        if self.source == "cifar" and not self.path:
            raise ConfigError("cifar dataset needs a path")


@dataclass
class ExperimentConfig:
    channel: ClusterConfig
    feedback_channel: ClusterConfig
    streams: int
    codec_spec: CodecSpec
    codec_seed: int
    evaluator_hidden: tuple
    evaluator_seed: int
    train: TrainingConfig
    eval_train: TrainingConfig
    label_snr_db: float
    label_realizations: int
    snr_sweep_db: tuple
    thresholds_db: tuple           # empty: derived from outcomes
    bit_options: tuple
    seeds: tuple
    fig4_antennas: tuple
    feedback_snr_db: float
    calibrate_count: int
    calibrate_realizations: int
    dataset: DatasetConfig

    def __post_init__(self):
        if not self.snr_sweep_db or not self.seeds or not self.bit_options:
            raise ConfigError("snr_sweep_db, seeds, and bit_options must be nonempty")
        if self.streams < 1:
            raise ConfigError("streams must be >= 1")
        if list(self.bit_options) != sorted(self.bit_options, reverse=True):
            raise ConfigError("bit_options must be descending")


# key -> (parser, default); dotted keys group into sub-configs
_KEYS = {
    "version": (int, 1),
    "channel.tx_antennas": (int, 16),
    "channel.rx_antennas": (int, 16),
    "channel.num_clusters": (int, 2),
    "channel.rays_per_cluster": (int, 4),
    "channel.spacing_over_wavelength": (float, 0.5),
    "channel.ray_spread_deg": (float, 7.5),
    "feedback_channel.tx_antennas": (int, 2),
    "feedback_channel.rx_antennas": (int, 2),
    "feedback_channel.num_clusters": (int, 3),
    "feedback_channel.rays_per_cluster": (int, 6),
    "feedback_channel.spacing_over_wavelength": (float, 0.5),
    "feedback_channel.ray_spread_deg": (float, 7.5),
    "streams": (int, 2),
    "codec.symbol_count": (int, 32),
    "codec.hidden": ("int_list", (256,)),
    "codec.seed": (int, 0),
    "evaluator.hidden": ("int_list", (64,)),
    "evaluator.seed": (int, 0),
    "train.learning_rate": (float, 1e-3),
    "train.batch_size": (int, 128),
    "train.epochs": (int, 30),
    "train.snr_db": (float, 6.0),
    "train.seed": (int, 0),
    "eval_train.learning_rate": (float, 1e-2),
    "eval_train.batch_size": (int, 128),
    "eval_train.epochs": (int, 300),
    "eval_train.seed": (int, 0),
    "label.snr_db": (float, 6.0),
    "label.realizations": (int, 4),
    "snr_sweep_db": ("float_list", (-6.0, 0.0, 6.0, 12.0, 18.0)),
    "thresholds_db": ("float_list", ()),
    "bit_options": ("int_list", (7, 6, 5)),
    "seeds": ("int_list", (1, 2, 3)),
    "fig4_antennas": ("int_list", (4, 16)),
    "feedback.snr_db": (float, 6.0),
    "calibrate.count": (int, 64),
    "calibrate.realizations": (int, 2),
    "dataset.source": (str, "synthetic"),
    "dataset.path": (str, ""),
    "dataset.train_count": (int, 2048),
    "dataset.test_count": (int, 512),
    "dataset.image_size": (int, 8),
    "dataset.complexity_mix": (float, 0.5),
    "dataset.seed": (int, 0),
}


def _parse_value(kind, raw: str):
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is str:
        return raw
    if kind == "int_list":
        return tuple(int(tok) for tok in raw.split())
    if kind == "float_list":
        return tuple(float(tok) for tok in raw.split())
    raise AssertionError(kind)


def parse_config_text(text: str) -> dict:
    """Raw key/value view with defaults resolved; unknown keys are errors."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _parse_value(_KEYS[key][0], raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    if "version" not in values:
        raise ConfigError("config must declare 'version'")
    if values["version"] != 1:
        raise ConfigError(f"unsupported config version {values['version']}")
    for key, (_, default) in _KEYS.items():
        values.setdefault(key, default)
    return values


def _cluster_config(values: dict, prefix: str) -> ClusterConfig:
    return ClusterConfig(
        num_clusters=values[f"{prefix}.num_clusters"],
        rays_per_cluster=values[f"{prefix}.rays_per_cluster"],
        tx_geometry=ArrayGeometry(values[f"{prefix}.tx_antennas"],
                                  values[f"{prefix}.spacing_over_wavelength"]),
        rx_geometry=ArrayGeometry(values[f"{prefix}.rx_antennas"],
                                  values[f"{prefix}.spacing_over_wavelength"]),
        ray_spread_deg=values[f"{prefix}.ray_spread_deg"],
    )


def build_config(values: dict) -> ExperimentConfig:
    size = values["dataset.image_size"]
    source_dim = size * size * 3
    return ExperimentConfig(
        channel=_cluster_config(values, "channel"),
        feedback_channel=_cluster_config(values, "feedback_channel"),
        streams=values["streams"],
        codec_spec=CodecSpec(source_dim=source_dim, symbol_count=values["codec.symbol_count"],
                             hidden=values["codec.hidden"]),
        codec_seed=values["codec.seed"],
        evaluator_hidden=values["evaluator.hidden"],
        evaluator_seed=values["evaluator.seed"],
        train=TrainingConfig(
            learning_rate=values["train.learning_rate"],
            batch_size=values["train.batch_size"],
            epochs=values["train.epochs"],
            train_snr_db=values["train.snr_db"],
            seed=values["train.seed"],
        ),
        eval_train=TrainingConfig(
            learning_rate=values["eval_train.learning_rate"],
            batch_size=values["eval_train.batch_size"],
            epochs=values["eval_train.epochs"],
            train_snr_db=values["train.snr_db"],
            seed=values["eval_train.seed"],
        ),
        label_snr_db=values["label.snr_db"],
        label_realizations=values["label.realizations"],
        snr_sweep_db=values["snr_sweep_db"],
        thresholds_db=values["thresholds_db"],
        bit_options=values["bit_options"],
        seeds=values["seeds"],
        fig4_antennas=values["fig4_antennas"],
        feedback_snr_db=values["feedback.snr_db"],
        calibrate_count=values["calibrate.count"],
        calibrate_realizations=values["calibrate.realizations"],
        dataset=DatasetConfig(
            source=values["dataset.source"],
            path=values["dataset.path"],
            train_count=values["dataset.train_count"],
            test_count=values["dataset.test_count"],
            image_size=size,
            complexity_mix=values["dataset.complexity_mix"],
            seed=values["dataset.seed"],
        ),
    )


def load_config(path) -> tuple[ExperimentConfig, dict]:
    with open(path) as fh:
        values = parse_config_text(fh.read())
    return build_config(values), values


def canonical_text(values: dict) -> str:
    """Deterministic full serialization (defaults resolved, keys sorted)."""
    lines = []
    for key in sorted(_KEYS):
        value = values[key]
        if isinstance(value, tuple):
            rendered = " ".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in value)
        elif isinstance(value, float):
            rendered = f"{value:.17g}"
        else:
            rendered = str(value)
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"


def config_hash(values: dict) -> str:
    """Short content hash identifying a fully-resolved configuration."""
    return hashlib.sha1(canonical_text(values).encode()).hexdigest()[:12]


def default_config_values() -> dict:
    return {key: default for key, (_, default) in _KEYS.items()}
