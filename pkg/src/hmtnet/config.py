"""Key-value config files mirroring :class:`NetworkConfig` and :class:`TrainConfig`.

Format (``configparser`` INI)::

    [network]
    dataset = msra
    use_concat = true
    ...
    [train]
    batch_size = 64
    lambda_f = 0.005
    ...

Loss weights live in ``[train]`` under their field names; ``scale_range``
is two comma-separated numbers.
"""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path

from .errors import ConfigurationError
from .losses import LossWeights
from .network import NetworkConfig
from .training import TrainConfig

_WEIGHT_KEYS = tuple(f.name for f in dataclasses.fields(LossWeights))


def _coerce(raw: str, default):
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(float(v) for v in raw.split(","))
    return raw


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    return str(value)


def _apply(cls, defaults, items: dict):
    known = {f.name: getattr(defaults, f.name) for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in items.items():
        if key not in known:
            raise ConfigurationError(f"unknown {cls.__name__} key {key!r}")
        kwargs[key] = _coerce(raw, known[key])
    return dataclasses.replace(defaults, **kwargs)


def parse_overrides(pairs) -> dict[str, str]:
    """``["train.epochs=5", "network.fc_width=64"]`` -> ``{"train.epochs": "5", ...}``."""
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigurationError(f"override {pair!r} is not section.key=value")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides: dict[str, str] | None = None) -> tuple[NetworkConfig, TrainConfig]:
    parser = configparser.ConfigParser()
    if path is not None:
        if not parser.read(path):
            raise ConfigurationError(f"cannot read config file {path}")
    net_items = dict(parser["network"]) if parser.has_section("network") else {}
    train_items = dict(parser["train"]) if parser.has_section("train") else {}
    for key, value in (overrides or {}).items():
        section, _, name = key.partition(".")
        if section == "network":
            net_items[name] = value
        elif section == "train":
            train_items[name] = value
        else:
            raise ConfigurationError(f"override {key!r} must start with network. or train.")
    weight_items = {k: train_items.pop(k) for k in list(train_items) if k in _WEIGHT_KEYS}
    weights = _apply(LossWeights, LossWeights(), weight_items)
    net = _apply(NetworkConfig, NetworkConfig(), net_items)
    train = _apply(TrainConfig, TrainConfig(weights=weights), train_items)
    return net, train


def dump_config(net: NetworkConfig, train: TrainConfig) -> str:
    parser = configparser.ConfigParser()
    parser["network"] = {f.name: _fmt(getattr(net, f.name)) for f in dataclasses.fields(net)}
    section = {}
    for f in dataclasses.fields(train):
        if f.name == "weights":
            section.update({k: _fmt(getattr(train.weights, k)) for k in _WEIGHT_KEYS})
        else:
            section[f.name] = _fmt(getattr(train, f.name))
    parser["train"] = section
    from io import StringIO

    buf = StringIO()
    parser.write(buf)
    return buf.getvalue()


def write_config(path, net: NetworkConfig, train: TrainConfig) -> None:
    Path(path).write_text(dump_config(net, train))
