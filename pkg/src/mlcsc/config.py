"""Experiment configuration files.

Configs are flat ``key = value`` INI files with four sections::

    [experiment]  kind, seed, grid
    [model]       sweeps, filters, kernels, bias, init, noise, eval_sweeps,
                  consistent
    [train]       learning_rate, batch_size, epochs, optimizer, momentum, clip,
                  checkpoint_every
    [data]        fixture_dir, train_images, test_images, n_train, n_test, crop,
                  drop_rate, block_edge, frames, fps, rate

Every key is optional; missing keys take the per-kind defaults in
``DEFAULTS``. Unknown sections or keys are rejected. List values are
comma separated.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .unroll import TrainConfig

__all__ = [
    "ConfigError",
    "ModelSpec",
    "DataSpec",
    "ExperimentConfig",
    "KINDS",
    "default_config",
    "load_config",
    "parse_config",
]

KINDS = ("alpha-sweep", "planted", "jpeg-ar", "traj")


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass(frozen=True)
class ModelSpec:
    """Architecture. ``filters`` and ``kernels`` have one entry per layer."""

    sweeps: int = 10
    filters: tuple = (16, 16)
    kernels: tuple = (5, 3)
    bias: float = 0.01
    init: str = "random"
    noise: float = 0.1
    eval_sweeps: int = 0
    consistent: bool = False

    @property
    def layers(self) -> int:
        return len(self.filters)


@dataclass(frozen=True)
class DataSpec:
    fixture_dir: str = ""
    train_images: tuple = ("astronaut_0", "chelsea_0", "coffee_0", "ihc_0", "retina_0",
                           "rocket_0")
    test_images: tuple = ("astronaut_1", "chelsea_1", "coffee_1", "ihc_1", "retina_1",
                          "rocket_1")
    n_train: int = 96
    n_test: int = 20
    crop: int = 32
    drop_rate: float = 0.5
    block_edge: int = 4
    frames: int = 150
    fps: float = 30.0
    rate: float = 3.141592653589793


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "planted"
    seed: int = 0
    grid: tuple = ()
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataSpec = field(default_factory=DataSpec)

    def validate(self) -> "ExperimentConfig":
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        m = self.model
        if not m.filters or len(m.filters) != len(m.kernels):
            raise ConfigError("model.filters and model.kernels need one entry per layer")
        if any(k % 2 == 0 or k < 1 for k in m.kernels):
            raise ConfigError("model.kernels must be odd and positive")
        if m.sweeps < 1 or m.eval_sweeps < 0 or m.bias < 0:
            raise ConfigError("model.sweeps >= 1, eval_sweeps >= 0 and bias >= 0 required")
        if m.init not in ("random", "delta"):
            raise ConfigError(f"model.init must be 'random' or 'delta', got {m.init!r}")
        if self.kind in ("alpha-sweep", "jpeg-ar"):
            if not self.grid:
                raise ConfigError("experiment.grid must be non-empty")
            if self.data.fixture_dir and not Path(self.data.fixture_dir).is_dir():
                raise ConfigError(f"fixture_dir {self.data.fixture_dir!r} does not exist")
        if self.kind == "alpha-sweep" and any(not 0.0 <= a <= 1.0 for a in self.grid):
            raise ConfigError("alpha grid must lie in [0, 1]")
        if self.kind == "jpeg-ar" and any(int(q) != q or not 1 <= q <= 100 for q in self.grid):
            raise ConfigError("quality factors must be integers in [1, 100]")
        if self.data.n_train < 1 or self.data.n_test < 1:
            raise ConfigError("n_train and n_test must be positive")
        return self


_COMMON_TRAIN = dict(optimizer="adam", batch_size=8, clip=1.0)

DEFAULTS = {
    "alpha-sweep": dict(
        grid=(0.0, 0.25, 0.5, 0.75, 1.0),
        model=dict(sweeps=10, filters=(16, 16), kernels=(5, 3), init="delta", eval_sweeps=30),
        train=dict(_COMMON_TRAIN, learning_rate=3e-3, epochs=8),
        data=dict(n_train=48),
    ),
    "jpeg-ar": dict(
        grid=(10,),
        model=dict(sweeps=5, filters=(16, 16), kernels=(5, 3), bias=0.001, init="delta",
                   consistent=True),
        train=dict(_COMMON_TRAIN, learning_rate=3e-3, epochs=24),
        data=dict(n_train=96),
    ),
    "traj": dict(
        grid=(),
        model=dict(sweeps=15, filters=(8, 4), kernels=(15, 5), bias=0.01, eval_sweeps=20000),
        train=dict(_COMMON_TRAIN, learning_rate=1e-2, epochs=10),
        data=dict(n_train=200, n_test=20),
    ),
    "planted": dict(
        grid=(),
        model=dict(sweeps=15, filters=(8, 4), kernels=(15, 5), bias=0.01, eval_sweeps=20000),
        train=dict(_COMMON_TRAIN, learning_rate=1e-2, epochs=10),
        data=dict(n_train=200, n_test=20, drop_rate=0.3),
    ),
}


def default_config(kind: str, seed: int = 0) -> ExperimentConfig:
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {KINDS}")
    d = DEFAULTS[kind]
    return ExperimentConfig(
        kind=kind,
        seed=seed,
        grid=tuple(d["grid"]),
        model=ModelSpec(**d["model"]),
        train=TrainConfig(**d["train"], seed=seed),
        data=DataSpec(**d["data"]),
    ).validate()


def _coerce(raw: str, template, key: str):
    raw = raw.strip()
    try:
        if isinstance(template, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(template, int):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
        if isinstance(template, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if template and isinstance(template[0], str):
                return tuple(items)
            if template and isinstance(template[0], int):
                return tuple(int(s) for s in items)
            return tuple(float(s) for s in items)
        if template is None or isinstance(template, str):
            return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    raise ConfigError(f"unsupported key type for {key!r}")


def _override(obj, section: str, values: dict):
    known = {f.name: f for f in fields(obj)}
    updates = {}
    for key, raw in values.items():
        if key not in known or key == "seed":
            raise ConfigError(f"unknown key [{section}] {key}")
        updates[key] = _coerce(raw, getattr(obj, key), key)
    return replace(obj, **updates)


_TRAIN_KEYS = ("learning_rate", "batch_size", "epochs", "optimizer", "momentum", "clip",
               "checkpoint_every")


def parse_config(text: str, seed=None) -> ExperimentConfig:
    """Build a config from INI text; ``seed`` overrides ``[experiment] seed``."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    unknown = set(cp.sections()) - {"experiment", "model", "train", "data"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    exp = dict(cp["experiment"]) if cp.has_section("experiment") else {}
    for key in exp:
        if key not in ("kind", "seed", "grid"):
            raise ConfigError(f"unknown key [experiment] {key}")
    kind = exp.get("kind", "planted").strip()
    try:
        file_seed = int(exp.get("seed", "0"))
    except ValueError as exc:
        raise ConfigError("seed must be an integer") from exc
    seed = file_seed if seed is None else int(seed)
    cfg = default_config(kind, seed)
    if "grid" in exp:
        template = (0,) if kind == "jpeg-ar" else (0.0,)
        cfg = replace(cfg, grid=_coerce(exp["grid"], template, "grid"))
    if cp.has_section("model"):
        cfg = replace(cfg, model=_override(cfg.model, "model", dict(cp["model"])))
    if cp.has_section("train"):
        values = dict(cp["train"])
        for key in values:
            if key not in _TRAIN_KEYS:
                raise ConfigError(f"unknown key [train] {key}")
        try:
            cfg = replace(cfg, train=_override(cfg.train, "train", values))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    if cp.has_section("data"):
        cfg = replace(cfg, data=_override(cfg.data, "data", dict(cp["data"])))
    return cfg.validate()


def load_config(path, seed=None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    return parse_config(path.read_text(), seed)
