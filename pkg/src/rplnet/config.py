"""Flat key=value run configuration files.

Unknown keys are rejected.  Defaults: gamma=0.5, lambda=0.1, beta=0.1,
batch_size=128, epochs=20 (desk-scale; the full-scale value of 100 is one
key away), optimizer=adam with lr=0.001, M=C=1.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

from .errors import ConfigError

MODES = ("softmax-baseline", "gcpl-baseline", "rpl", "rpl++")
DATASETS = ("mnist", "fashionmnist", "cifar10", "custom-idx", "custom-cifar")
ENCODERS = ("mlp-small", "conv-small")
OPTIMIZERS = ("sgd", "adam")


@dataclass
class RunConfig:
    dataset: str = "mnist"
    data_root: str = ""
    mode: str = "rpl"
    n_known: int = 6
    seed: int = 0
    trials: int = 5
    epochs: int = 20
    batch_size: int = 128
    lr: float = 0.001
    optimizer: str = "adam"
    momentum: float = 0.9
    lam: float = 0.1  # file key: lambda
    gamma: float = 0.5
    beta: float = 0.1
    m_points: int = 1  # file key: M
    c_protos: int = 1  # file key: C
    encoder: str = "conv-small"
    out_dir: str = "out"

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.encoder not in ENCODERS:
            raise ConfigError(f"encoder must be one of {ENCODERS}, got '{self.encoder}'")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got '{self.optimizer}'")
        if self.lam < 0 or self.beta < 0 or self.gamma <= 0:
            raise ConfigError(
                f"need lambda >= 0, beta >= 0, gamma > 0; got "
                f"lambda={self.lam}, beta={self.beta}, gamma={self.gamma}"
            )
        if self.n_known < 2 or self.epochs < 0 or self.batch_size < 1 or self.trials < 1:
            raise ConfigError("n_known >= 2, epochs >= 0, batch_size >= 1, trials >= 1 required")
        if self.m_points < 1 or self.c_protos < 1:
            raise ConfigError("M >= 1 and C >= 1 required")
        return self


_FILE_KEYS = {
    "dataset": "dataset",
    "data_root": "data_root",
    "mode": "mode",
    "n_known": "n_known",
    "seed": "seed",
    "trials": "trials",
    "epochs": "epochs",
    "batch_size": "batch_size",
    "lr": "lr",
    "optimizer": "optimizer",
    "momentum": "momentum",
    "lambda": "lam",
    "gamma": "gamma",
    "beta": "beta",
    "M": "m_points",
    "C": "c_protos",
    "encoder": "encoder",
    "out_dir": "out_dir",
}
_ATTR_TO_KEY = {v: k for k, v in _FILE_KEYS.items()}
_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_config(text: str) -> RunConfig:
    """Parse key=value lines; '#' starts a comment; unknown keys are errors."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got '{line}'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _FILE_KEYS:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        attr = _FILE_KEYS[key]
        kind = _TYPES[attr]
        try:
            if kind in (int, "int"):
                values[attr] = int(val)
            elif kind in (float, "float"):
                values[attr] = float(val)
            else:
                values[attr] = val
        except ValueError as e:
            raise ConfigError(f"line {lineno}: bad value for '{key}': {val}") from e
    return RunConfig(**values).validate()


def load_config(path) -> RunConfig:
    with open(path, "r") as f:
        return parse_config(f.read())


def config_text(cfg: RunConfig) -> str:
    """Fully resolved config in file form; parsing it back reproduces cfg."""
    lines = []
    for f in fields(RunConfig):
        val = getattr(cfg, f.name)
        lines.append(f"{_ATTR_TO_KEY[f.name]}={val}")
    return "\n".join(lines) + "\n"


def config_digest(cfg: RunConfig) -> str:
    return hashlib.sha256(config_text(cfg).encode()).hexdigest()[:16]
