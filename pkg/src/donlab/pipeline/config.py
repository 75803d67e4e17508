"""Run configuration: nested dataclasses stored as an INI file.

Each top-level section mirrors one module config; values are JSON literals
so tuples, nulls and nested specs survive a round trip unchanged.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import json
import math
import types
import typing
from dataclasses import dataclass, replace
from pathlib import Path

from ..augment import AugmentConfig
from ..errors import ConfigError
from ..losses import LossConfig
from ..netcore.model import Architecture, ConvLayer
from ..scenegen import DatasetSpec, PairConstraint


@dataclass(frozen=True)
class ModelConfig:
    descriptor_dim: int = 8
    # empty -> Architecture.default; else rows of [kernel, cin, cout, stride, relu]
    layers: tuple = ()

    def __post_init__(self):
        if self.descriptor_dim < 1:
            raise ValueError("descriptor_dim must be >= 1")
        object.__setattr__(self, "layers", tuple(tuple(l) for l in self.layers))

    def architecture(self) -> Architecture:
        if not self.layers:
            return Architecture.default(self.descriptor_dim)
        arch = Architecture(tuple(ConvLayer(*l) for l in self.layers))
        if arch.descriptor_dim != self.descriptor_dim:
            raise ValueError("last layer width differs from descriptor_dim")
        return arch


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 3e-5
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: str = "constant"  # constant | cosine (decay to zero over the run)

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be >= 0")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError("schedule must be 'constant' or 'cosine'")

    def lr_at(self, step: int, total: int) -> float:
        if self.schedule == "constant" or total <= 0:
            return self.lr
        return 0.5 * self.lr * (1.0 + math.cos(math.pi * min(step, total) / total))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    pairs_per_epoch: int = 1000
    batch_size: int | None = None  # None -> 2 for NT-Xent, 1 for pixelwise losses
    val_every: int = 5
    val_k: int = 80
    val_pairs: int = 50
    val_queries: int = 100
    test_pairs: int = 50
    test_queries: int = 100
    auc_k_max: int = 100
    min_translation: float = 0.0
    min_angle: float = 0.0
    max_retries: int = 8

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        for name in ("pairs_per_epoch", "val_every", "val_k", "val_pairs", "val_queries", "test_pairs", "test_queries", "auc_k_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def pair_constraint(self) -> PairConstraint:
        return PairConstraint(self.min_translation, self.min_angle)


@dataclass(frozen=True)
class DataConfig:
    """Scene sets, either directories on disk or generation recipes."""

    train_path: str | None = None
    val_path: str | None = None
    train_spec: DatasetSpec | None = DatasetSpec()
    val_spec: DatasetSpec | None = DatasetSpec(n_scenes=2, seed=1000, n_distractors=1, name="val")
    test_path: str | None = None
    test_spec: DatasetSpec | None = DatasetSpec(n_scenes=2, seed=2000, n_distractors=1, name="test")

    def __post_init__(self):
        if self.train_path is None and self.train_spec is None:
            raise ValueError("training data needs a path or a spec")
        if self.val_path is None and self.val_spec is None:
            raise ValueError("validation data needs a path or a spec")
        if self.test_path is None and self.test_spec is None:
            raise ValueError("test data needs a path or a spec")


@dataclass(frozen=True)
class RunConfig:
    name: str = "run"
    seeds: tuple = (0,)
    data: DataConfig = DataConfig()
    model: ModelConfig = ModelConfig()
    loss: LossConfig = LossConfig()
    augment: AugmentConfig = AugmentConfig()
    optim: OptimConfig = OptimConfig()
    train: TrainConfig = TrainConfig()

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ValueError("need at least one seed")

    @property
    def batch_size(self) -> int:
        if self.train.batch_size is not None:
            return self.train.batch_size
        return 2 if self.loss.kind == "ntxent" else 1

    def with_values(self, **updates) -> "RunConfig":
        """Copy with dotted-path overrides, e.g. ``{"loss.tau": 0.3}``."""
        cfg = self
        for path, value in updates.items():
            cfg = _replace_path(cfg, path.split("."), value)
        return cfg


SECTIONS = ("data", "model", "loss", "augment", "optim", "train")


def _replace_path(obj, parts, value):
    if len(parts) == 1:
        return _build(type(obj), {**_to_plain(obj), parts[0]: value})
    child = getattr(obj, parts[0])
    return replace(obj, **{parts[0]: _replace_path(child, parts[1:], value)})


def _to_plain(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}


def _encode(value):
    if dataclasses.is_dataclass(value):
        return {k: _encode(v) for k, v in _to_plain(value).items()}
    if isinstance(value, (tuple, list)):
        return [_encode(v) for v in value]
    return value


def _decode(tp, value):
    """Coerce a JSON value to the annotated field type."""
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None:
            return None
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return _decode(args[0], value)
    if isinstance(tp, type) and dataclasses.is_dataclass(tp):
        if isinstance(value, tp):
            return value
        if not isinstance(value, dict):
            raise ConfigError(f"expected a table for {tp.__name__}")
        return _build(tp, value)
    if tp is tuple or origin is tuple:
        return tuple(_freeze(v) for v in value)
    if tp is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _freeze(v):
    return tuple(_freeze(x) for x in v) if isinstance(v, list) else v


def _build(cls, values: dict):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    try:
        return cls(**{k: _decode(hints[k], v) for k, v in values.items()})
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{cls.__name__}: {exc}") from exc


def config_to_text(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["run"] = {"name": json.dumps(cfg.name), "seeds": json.dumps(list(cfg.seeds))}
    for section in SECTIONS:
        parser[section] = {k: json.dumps(_encode(v)) for k, v in _to_plain(getattr(cfg, section)).items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def config_from_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    unknown = set(parser.sections()) - set(SECTIONS) - {"run"}
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    top = {}
    hints = typing.get_type_hints(RunConfig)
    for section in parser.sections():
        try:
            values = {k: json.loads(v) for k, v in parser[section].items()}
        except json.JSONDecodeError as exc:
            raise ConfigError(f"[{section}] value is not a JSON literal: {exc}") from exc
        if section == "run":
            top.update(values)
        else:
            top[section] = _decode(hints[section], values)
    return _build(RunConfig, top)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(config_to_text(cfg))


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_text(text)


# stride-2 variant of the default net: one downsampling step, then four 3x3 layers at half resolution
REFERENCE_LAYERS = (
    (3, 3, 24, 2), (3, 24, 32, 1), (3, 32, 48, 1), (3, 48, 48, 1), (3, 48, 48, 1), (1, 48, 8, 1, False),
)


def reference_config(**overrides) -> RunConfig:
    """Desk-scale reference run: 4-object catalog, 6 multi-object scenes, 64x64, D=8."""
    cfg = RunConfig(
        name="reference",
        seeds=(0, 1, 2),
        data=DataConfig(train_spec=DatasetSpec(n_scenes=6, catalog_size=4, seed=0, name="train"),
                        val_spec=DatasetSpec(n_scenes=2, catalog_size=4, seed=1000, n_distractors=1, name="val"),
                        test_spec=DatasetSpec(n_scenes=3, catalog_size=4, seed=2000, n_distractors=1, name="test")),
        model=ModelConfig(descriptor_dim=8, layers=REFERENCE_LAYERS),
        loss=LossConfig(kind="ntxent", tau=0.1, n_correspondences=256),
        augment=AugmentConfig(),
        optim=OptimConfig(lr=1e-3, schedule="cosine"),
        train=TrainConfig(epochs=40, pairs_per_epoch=200, val_every=5, val_k=8, val_pairs=30,
                          val_queries=100, auc_k_max=10),
    )
    return cfg.with_values(**overrides)
