"""Line-oriented run configuration.

One ``key = value`` pair per line, ``#`` starts a comment, blank lines are
ignored. Keys are dotted: ``net.*`` describes the model, ``opt.*`` the
optimizer and schedule, ``train.*`` the loop, ``data.*`` the dataset
manifests and ``out.dir`` the output directory. Relative paths resolve
against the config file's directory. Example::

    data.train = data/train/manifest.tsv
    data.val = data/val/manifest.tsv
    out.dir = runs/bars10
    net.levels = 3
    net.blocks_per_level = 3
    opt.lr = 0.1
    train.epochs = 30
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .blocks import NetworkSpec
from .train import HyperNet, TrainConfig


class ConfigError(ValueError):
    """Malformed config, unknown key or missing required key."""


def _int_list(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.replace(",", " ").split())


def _opt_float(s: str) -> float | None:
    return None if s.lower() in ("none", "off", "") else float(s)


def _opt_int(s: str) -> int | None:
    return None if s.lower() in ("none", "off", "") else int(s)


# key -> parser; the target field is implied by the key's last component
KEYS = {
    "data.train": str,
    "data.val": str,
    "out.dir": str,
    "net.kind": str,
    "net.input_channels": int,
    "net.width": int,
    "net.levels": int,
    "net.blocks_per_level": int,
    "net.head": str,
    "net.head_pool": str,
    "net.classes": int,
    "net.topology": str,
    "net.coarsening": str,
    "opt.name": str,
    "opt.lr": float,
    "opt.momentum": float,
    "opt.weight_decay": float,
    "opt.beta1": float,
    "opt.beta2": float,
    "opt.eps": float,
    "opt.clip_norm": _opt_float,
    "opt.period": _opt_int,
    "opt.milestones": _int_list,
    "opt.factor": float,
    "train.epochs": int,
    "train.batch_size": int,
    "train.loss": str,
    "train.weighting": str,
    "train.seed": int,
    "train.dtype": str,
    "train.mode": str,
    "train.checkpoint_every": int,
}
REQUIRED = ("data.train", "out.dir", "net.levels", "net.blocks_per_level", "opt.lr", "train.epochs")

_TRAIN_FIELDS = {
    "opt.name": "optimizer", "opt.lr": "lr", "opt.momentum": "momentum",
    "opt.weight_decay": "weight_decay", "opt.beta1": "beta1", "opt.beta2": "beta2",
    "opt.eps": "eps", "opt.clip_norm": "clip_norm", "opt.period": "period",
    "opt.milestones": "milestones", "opt.factor": "factor",
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value`` strings; rejects unknown and repeated keys."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


@dataclass
class RunConfig:
    values: dict[str, object]
    base: Path

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def path(self, key: str) -> Path | None:
        v = self.values.get(key)
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base / p

    def train_config(self) -> TrainConfig:
        kw = {}
        for key, v in self.values.items():
            if key in _TRAIN_FIELDS:
                kw[_TRAIN_FIELDS[key]] = v
            elif key.startswith("train."):
                kw[key[6:]] = v
        try:
            return TrainConfig(**kw)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    def model(self, task: str, input_channels: int, classes: int):
        """The network described by ``net.*``; unset head, classes and channels follow the dataset."""
        net = {k[4:]: v for k, v in self.values.items() if k.startswith("net.")}
        kind = net.pop("kind", "hyper")
        net.setdefault("input_channels", input_channels)
        if task != "regression":
            net.setdefault("classes", classes)
        try:
            if kind == "hyper":
                if "coarsening" in net:
                    raise ConfigError("net.coarsening applies only to net.kind = resnet")
                head = {"classification": "classifier", "segmentation": "segmenter",
                        "regression": "regressor"}[task]
                net.setdefault("head", head)
                mode = self.values.get("train.mode", "reversible")
                return HyperNet(NetworkSpec(mode=mode, **net))
            if kind == "resnet":
                from .baseline import ResNetBaseline, ResNetBaselineSpec

                for k in ("head", "head_pool", "topology"):
                    if k in net:
                        raise ConfigError(f"net.{k} does not apply to net.kind = resnet")
                return ResNetBaseline(ResNetBaselineSpec(**net))
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(str(e)) from e
        raise ConfigError(f"unknown net.kind {kind!r}")


def parse_config(text: str, base: str | os.PathLike = ".", source: str = "<config>",
                 required=REQUIRED) -> RunConfig:
    raw = parse_config_text(text, source)
    for key in required:
        if key not in raw:
            raise ConfigError(f"{source}: missing required key {key!r}")
    values = {}
    for key, s in raw.items():
        try:
            values[key] = KEYS[key](s)
        except ValueError as e:
            raise ConfigError(f"{source}: bad value for {key!r}: {s!r}") from e
    return RunConfig(values, Path(base))


def load_config(path: str | os.PathLike, required=REQUIRED) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text, path.parent, str(path), required)
