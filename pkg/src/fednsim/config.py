"""Experiment configuration: flat key = value files.

The format is deliberately flat and diff-friendly: one `key = value` per
line, `#` comments, blank lines allowed.  Unknown keys, bad types, and
out-of-range values are reported with the key name and line number.
Serialization emits every key in a fixed order so that
parse -> serialize -> parse is the identity and the config hash is
whitespace- and comment-insensitive.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

from .data import PARTITION_STRATEGIES, PartitionSpec
from .federation import AGGREGATION_MODES, FederationConfig
from .losses import METHODS, LossConfig
from .model import MlpConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # dataset source
    data: str = "synth"
    synth_classes: int = 10
    synth_per_class: int = 100
    synth_test_per_class: int = 100
    synth_dim: int = 32
    synth_separation: float = 3.0
    idx_train_images: str = ""
    idx_train_labels: str = ""
    idx_test_images: str = ""
    idx_test_labels: str = ""
    # partition
    partition: str = "iid"
    clients: int = 10
    shards_per_client: int = 2
    dirichlet_alpha: float = 0.5
    # model
    hidden_dims: tuple[int, ...] = (64, 64)
    # federation
    method: str = "fedavg"
    rounds: int = 50
    local_epochs: int = 5
    batch_size: int = 50
    sampling_ratio: float = 0.1
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5
    lr_decay: float = 0.99
    beta: float = 1.0
    tau: float = 1.0
    mu: float = 0.1
    interp_lambda: float = 0.5
    aggregation: str = "size_weighted"
    seed: int = 0
    # bookkeeping
    eval_stride: int = 1
    checkpoint_stride: int = 0
    out_dir: str = "runs"

    def loss_config(self) -> LossConfig:
        return LossConfig(
            method=self.method,
            beta=self.beta,
            tau=self.tau,
            mu=self.mu,
            interp_lambda=self.interp_lambda,
        )

    def federation_config(self) -> FederationConfig:
        return FederationConfig(
            rounds=self.rounds,
            local_epochs=self.local_epochs,
            batch_size=self.batch_size,
            sampling_ratio=self.sampling_ratio,
            loss=self.loss_config(),
            lr0=self.lr0,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            lr_decay=self.lr_decay,
            aggregation=self.aggregation,
            master_seed=self.seed,
            eval_stride=self.eval_stride,
        )

    def partition_spec(self) -> PartitionSpec:
        return PartitionSpec(
            strategy=self.partition,
            clients=self.clients,
            shards_per_client=self.shards_per_client,
            alpha=self.dirichlet_alpha,
            seed=self.seed,
        )

    def mlp_config(self, input_dim: int, num_classes: int) -> MlpConfig:
        return MlpConfig(input_dim=input_dim, hidden_dims=self.hidden_dims, num_classes=num_classes)


_FIELD_ORDER = [f.name for f in fields(ExperimentConfig)]


def _parse_int(raw: str) -> int:
    return int(raw, 10)


def _parse_float(raw: str) -> float:
    return float(raw)


def _parse_str(raw: str) -> str:
    return raw


def _parse_dims(raw: str) -> tuple[int, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(int(part.strip(), 10) for part in raw.split(","))


_PARSERS = {int: _parse_int, float: _parse_float, str: _parse_str}

# key -> (parser, range check, human-readable requirement)
_SCHEMA: dict[str, tuple] = {
    "data": (_parse_str, lambda v: v in ("synth", "idx"), "one of synth, idx"),
    "synth_classes": (_parse_int, lambda v: v >= 2, ">= 2"),
    "synth_per_class": (_parse_int, lambda v: v >= 1, ">= 1"),
    "synth_test_per_class": (_parse_int, lambda v: v >= 1, ">= 1"),
    "synth_dim": (_parse_int, lambda v: v >= 1, ">= 1"),
    "synth_separation": (_parse_float, lambda v: v >= 0.0, ">= 0"),
    "idx_train_images": (_parse_str, lambda v: True, ""),
    "idx_train_labels": (_parse_str, lambda v: True, ""),
    "idx_test_images": (_parse_str, lambda v: True, ""),
    "idx_test_labels": (_parse_str, lambda v: True, ""),
    "partition": (_parse_str, lambda v: v in PARTITION_STRATEGIES, f"one of {', '.join(PARTITION_STRATEGIES)}"),
    "clients": (_parse_int, lambda v: v >= 1, ">= 1"),
    "shards_per_client": (_parse_int, lambda v: v >= 1, ">= 1"),
    "dirichlet_alpha": (_parse_float, lambda v: v > 0.0, "> 0"),
    "hidden_dims": (_parse_dims, lambda v: all(h >= 1 for h in v), "comma-separated integers >= 1"),
    "method": (_parse_str, lambda v: v in METHODS, f"one of {', '.join(METHODS)}"),
    "rounds": (_parse_int, lambda v: v >= 1, ">= 1"),
    "local_epochs": (_parse_int, lambda v: v >= 1, ">= 1"),
    "batch_size": (_parse_int, lambda v: v >= 1, ">= 1"),
    "sampling_ratio": (_parse_float, lambda v: 0.0 < v <= 1.0, "in (0, 1]"),
    "lr0": (_parse_float, lambda v: v >= 0.0, ">= 0"),
    "momentum": (_parse_float, lambda v: 0.0 <= v < 1.0, "in [0, 1)"),
    "weight_decay": (_parse_float, lambda v: v >= 0.0, ">= 0"),
    "lr_decay": (_parse_float, lambda v: 0.0 < v <= 1.0, "in (0, 1]"),
    "beta": (_parse_float, lambda v: v >= 0.0, ">= 0"),
    "tau": (_parse_float, lambda v: v > 0.0, "> 0"),
    "mu": (_parse_float, lambda v: v >= 0.0, ">= 0"),
    "interp_lambda": (_parse_float, lambda v: 0.0 <= v <= 1.0, "in [0, 1]"),
    "aggregation": (_parse_str, lambda v: v in AGGREGATION_MODES, f"one of {', '.join(AGGREGATION_MODES)}"),
    "seed": (_parse_int, lambda v: True, ""),
    "eval_stride": (_parse_int, lambda v: v >= 1, ">= 1"),
    "checkpoint_stride": (_parse_int, lambda v: v >= 0, ">= 0"),
    "out_dir": (_parse_str, lambda v: True, ""),
}

assert set(_SCHEMA) == set(_FIELD_ORDER)


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    values = {}
    seen_lines = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw_line.strip()!r}")
        key, raw_value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(
                f"{source}:{lineno}: duplicate key {key!r} (first set on line {seen_lines[key]})"
            )
        parser, check, requirement = _SCHEMA[key]
        try:
            value = parser(raw_value)
        except ValueError:
            raise ConfigError(
                f"{source}:{lineno}: {key}: cannot parse {raw_value!r}"
            ) from None
        if not check(value):
            raise ConfigError(f"{source}:{lineno}: {key}: must be {requirement}, got {raw_value}")
        values[key] = value
        seen_lines[key] = lineno
    cfg = ExperimentConfig(**values)
    if cfg.data == "idx":
        for key in ("idx_train_images", "idx_train_labels", "idx_test_images", "idx_test_labels"):
            if not getattr(cfg, key):
                raise ConfigError(f"{source}: {key} is required when data = idx")
    return cfg


def parse_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, source=str(path))


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text: every key once, fixed order, normalized values."""
    lines = [f"{name} = {_format_value(getattr(cfg, name))}" for name in _FIELD_ORDER]
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable digest of the canonical serialization."""
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()


def config_dict(cfg: ExperimentConfig) -> dict:
    """Plain dict echo with JSON-friendly values, in canonical key order."""
    out = {}
    for name in _FIELD_ORDER:
        value = getattr(cfg, name)
        out[name] = list(value) if isinstance(value, tuple) else value
    return out
