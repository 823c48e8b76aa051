"""Nested JSON config with dotted ``key=value`` overrides.

Every section maps onto one dataclass; ``build_*`` helpers turn the plain
dict into the objects the modules consume.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict

from .discretize import MeanShiftConfig
from .losses import LossConfig
from .sampling import SamplerConfig
from .synthgen import SceneConfig
from .tinynet import NetConfig, default_layers
from .trainer import TrainConfig
from .verify import VerifyConfig


def default_config():
    """All defaults, as plain JSON-able data."""
    return {
        "seed": 0,
        "scene": SceneConfig().to_dict(),
        "data": {"train_count": 200, "train_start": 0, "test_count": 50, "test_start": 100000},
        "loss": asdict(LossConfig(weight_binary=10.0, weight_pi=10.0, weight_ms=0.1, weight_quant=0.1)),
        "sampler": asdict(SamplerConfig()),
        "net": {"layers": default_layers(), "input_channels": 3, "init_seed": 0, "input_mean": 0.5, "input_std": 0.25},
        "train": {
            "steps": 24000,
            "scenes_per_step": 1,
            "optimizer": "adam",
            "lr": 0.002,
            "momentum": 0.9,
            "weight_decay": 0.0,
            "lr_schedule": "cosine",
            "lr_final_fraction": 0.05,
            "grad_clip": 5.0,
            "checkpoint_interval": 0,
            "log_interval": 50,
        },
        "meanshift": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(MeanShiftConfig()).items()},
        "verify": asdict(VerifyConfig()),
        "gradcheck": {"points": 100, "step": 1e-4, "tolerance": 1e-4, "net_params": 50,
                      "net_step": 1e-3, "net_tolerance": 1e-3, "size": 16},
    }


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg, assignment):
    """Apply ``"a.b.c=value"`` in place; value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise KeyError(f"override {assignment!r} is not key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise KeyError(f"unknown config section {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise KeyError(f"unknown config key {key!r}")
    node[parts[-1]] = _parse_value(raw)
    return cfg


def merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if k not in out:
            raise KeyError(f"unknown config key {k!r}")
        if isinstance(v, dict) and isinstance(out[k], dict) and k != "net":
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, overrides=()):
    cfg = default_config()
    if path:
        with open(path) as fh:
            cfg = merge(cfg, json.load(fh))
    for o in overrides:
        apply_override(cfg, o)
    return cfg


def build_scene(cfg):
    return SceneConfig(**cfg["scene"])


def build_loss(cfg):
    return LossConfig(**cfg["loss"])


def build_sampler(cfg):
    return SamplerConfig(**cfg["sampler"])


def build_net(cfg):
    return NetConfig.from_dict(cfg["net"])


def build_meanshift(cfg):
    return MeanShiftConfig(**cfg["meanshift"])


def build_verify(cfg):
    return VerifyConfig(**cfg["verify"])


def build_train(cfg):
    t = dict(cfg["train"])
    return TrainConfig(loss=build_loss(cfg), sampler=build_sampler(cfg), net=build_net(cfg),
                       seed=cfg["seed"], **t)
