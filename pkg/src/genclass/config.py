"""Run configuration and the ``key = value`` config file format.

Training keys are bare (``lr``, ``batch_size``, ...).  Synthetic-dataset keys
take a ``synth.`` prefix, evaluation keys ``eval.`` and softmax-baseline keys
``baseline.``.  Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import SyntheticSpec, parse_kv
from .errors import ConfigError, ManifestError


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 64
    n_dis: int = 5
    lam: float = 10.0
    gamma: float = 0.1
    n_g: int = 50
    d_z: int = 0  # 0 means "same as d_a"
    g_hidden: int = 4096
    d_hidden: int = 4096
    c_hidden: int = 1024
    iterations: int = 2000
    seed: int = 0
    precision: str = "double"
    log_interval: int = 100
    adam_b1: float = 0.5
    adam_b2: float = 0.999
    adam_eps: float = 1e-8

    def check(self):
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.n_dis < 1:
            raise ConfigError(f"n_dis must be >= 1, got {self.n_dis}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if self.n_g < 1:
            raise ConfigError(f"n_g must be >= 1, got {self.n_g}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.log_interval < 1:
            raise ConfigError(f"log_interval must be >= 1, got {self.log_interval}")
        if self.d_z < 0 or min(self.g_hidden, self.d_hidden, self.c_hidden) < 1:
            raise ConfigError("d_z must be >= 0 and hidden widths >= 1")
        if self.precision not in ("double", "single"):
            raise ConfigError(f"precision must be 'double' or 'single', got {self.precision!r}")
        return self

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32


@dataclass
class EvalOptions:
    mode: str = "zsl"
    n_g: int = 50
    seed: int = 0

    def check(self):
        if self.mode not in ("zsl", "gzsl"):
            raise ConfigError(f"mode must be 'zsl' or 'gzsl', got {self.mode!r}")
        if self.n_g < 1:
            raise ConfigError(f"n_g must be >= 1, got {self.n_g}")
        return self


@dataclass
class BaselineOptions:
    samples_per_class: int = 200
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    optimizer: str = "adam"

    def check(self):
        if self.samples_per_class < 1:
            raise ConfigError(f"samples_per_class must be >= 1, got {self.samples_per_class}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.optimizer not in ("adam", "gd"):
            raise ConfigError(f"optimizer must be 'adam' or 'gd', got {self.optimizer!r}")
        return self


SECTIONS = {"": TrainConfig, "synth.": SyntheticSpec, "eval.": EvalOptions, "baseline.": BaselineOptions}


def _coerce(cls, name, raw):
    ftype = {f.name: f for f in fields(cls)}[name].type
    try:
        if ftype in ("int", int):
            return int(raw)
        if ftype in ("float", float):
            return float(raw)
        return str(raw)
    except ValueError:
        raise ConfigError(f"config key {name!r}: cannot parse {raw!r} as {ftype}") from None


@dataclass
class RunSettings:
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    synth: SyntheticSpec = dataclasses.field(default_factory=SyntheticSpec)
    eval: EvalOptions = dataclasses.field(default_factory=EvalOptions)
    baseline: BaselineOptions = dataclasses.field(default_factory=BaselineOptions)

    def section(self, prefix):
        return {"": self.train, "synth.": self.synth, "eval.": self.eval, "baseline.": self.baseline}[prefix]

    def set(self, key, raw):
        for prefix, cls in SECTIONS.items():
            if prefix and key.startswith(prefix):
                name = key[len(prefix):]
                break
        else:
            prefix, cls, name = "", TrainConfig, key
        names = {f.name for f in fields(cls)}
        if name not in names:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(self.section(prefix), name, _coerce(cls, name, raw))

    def echo(self):
        """All effective values as ``key = value`` lines in a fixed order."""
        lines = []
        for prefix in SECTIONS:
            obj = self.section(prefix)
            for f in fields(obj):
                lines.append(f"{prefix}{f.name} = {getattr(obj, f.name)}")
        return lines


def parse_config_text(text, source="<config>", settings=None):
    settings = settings or RunSettings()
    try:
        kv = parse_kv(text, source)
    except ManifestError as exc:
        raise ConfigError(str(exc)) from None
    for key, value in kv.items():
        settings.set(key, value)
    return settings


def load_config(path, settings=None):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path), settings)
