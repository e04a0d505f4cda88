"""Experiment configuration: TOML parsing, validation, overrides."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:               # 3.10
    import tomli as tomllib

from .errors import ConfigError

_CHOICES = {
    "dataset": ("synthetic", "cifar10"),
    "prune_mode": ("data-free", "real-data"),
    "comm_mode": ("seed-trick", "full-vector"),
    "method": ("bp-free", "fedavg"),
}


@dataclass
class ExperimentConfig:
    seed: int = 0
    model: str = "synth-conv"
    dataset: str = "synthetic"
    data_dir: str = ""

    # synthetic dataset shape
    classes: int = 10
    dims: int = 32
    per_class: int = 200
    test_per_class: int = 50
    separation: float = 4.0

    # federation
    devices: int = 20
    g_p: int = 4
    g_t: int = 4
    beta: float = 0.1
    dropout_prob: float = 0.0

    # pruning
    t_p: int = 50
    density: float = 0.2
    eps_scale: float = 0.01
    mc_samples: int = 1
    probe_batch: int = 256
    prune_mode: str = "data-free"

    # training
    t_t: int = 400
    k: int = 50
    sigma: float = 1e-3
    central_diff: bool = False
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-3
    lr_decay: float = 0.998
    batch_size: int = 32
    local_epochs: int = 1
    comm_mode: str = "seed-trick"
    method: str = "bp-free"
    flops_budget: float = 0.0   # 0 = no budget; else stop once cumulative flops pass it

    eval_size: int = 1000

    def validate(self) -> None:
        pos = ["classes", "dims", "per_class", "test_per_class", "devices",
               "g_p", "g_t", "beta", "k", "sigma", "lr", "lr_decay",
               "batch_size", "local_epochs", "mc_samples", "probe_batch",
               "eval_size"]
        for name in pos:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        nonneg = ["t_p", "t_t", "eps_scale", "momentum", "weight_decay",
                  "dropout_prob", "separation", "flops_budget"]
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not 0 < self.density <= 1:
            raise ConfigError(f"density must be in (0, 1], got {self.density}")
        if not self.dropout_prob < 1:
            raise ConfigError("dropout_prob must be < 1")
        if self.g_t > self.devices or self.g_p > self.devices:
            raise ConfigError("selected device counts cannot exceed the pool")
        for name, allowed in _CHOICES.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, "
                                  f"got {getattr(self, name)!r}")
        if self.dataset == "cifar10" and not self.resolved_data_dir():
            raise ConfigError("cifar10 dataset needs data_dir or FEDZO_DATA_DIR")

    def resolved_data_dir(self) -> str:
        return self.data_dir or os.environ.get("FEDZO_DATA_DIR", "")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_toml(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                lines.append(f"{f.name} = {str(v).lower()}")
            elif isinstance(v, str):
                lines.append(f'{f.name} = "{v}"')
            else:
                lines.append(f"{f.name} = {v!r}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(name: str, value):
    ftype = _FIELDS[name].type
    if ftype == "bool":
        if isinstance(value, bool):
            return value
        if str(value).lower() in ("true", "1", "yes"):
            return True
        if str(value).lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse boolean for {name}: {value!r}")
    if ftype == "int":
        if isinstance(value, float) and value != int(value):
            raise ConfigError(f"{name} expects an integer, got {value}")
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{name} expects an integer, got {value!r}") from None
    if ftype == "float":
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{name} expects a number, got {value!r}") from None
    return str(value)


def config_from_dict(data: dict) -> ExperimentConfig:
    unknown = set(data) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = ExperimentConfig(**{k: _coerce(k, v) for k, v in data.items()})
    cfg.validate()
    return cfg


def load_config(path: str, overrides: list[str] | None = None) -> ExperimentConfig:
    """Parse a TOML config file and apply `key=value` overrides (flags win)."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value: {item!r}")
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key in override: {key!r}")
        data[key] = value.strip()
    return config_from_dict(data)
