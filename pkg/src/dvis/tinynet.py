"""A small fully-convolutional predictor with hand-written backprop.

Layers are described by plain dicts so configs round-trip through JSON::

    {"type": "conv", "kernel": 3, "out": 16, "stride": 1}
    {"type": "relu"}
    {"type": "upsample", "factor": 2}
    {"type": "gap"}                      # global average pool -> vector
    {"type": "linear", "out": 4}

Activations are ``(C, H, W)`` arrays (vectors after ``gap``). Convolutions
use zero same-padding. Parameters live in a flat dict keyed ``"<layer>.w"``
and ``"<layer>.b"``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .grid import DimensionError


class TrainingError(RuntimeError):
    """Optimisation hit non-finite numbers."""


class StaleTapeError(RuntimeError):
    """Backward was called on a tape recorded before a parameter update."""


def default_layers():
    widths = [16, 32, 32, 32, 16, 1]
    layers = []
    for i, w in enumerate(widths):
        layers.append({"type": "conv", "kernel": 3, "out": w, "stride": 2 if i == 1 else 1})
        layers.append({"type": "relu"})
    return layers


@dataclass(frozen=True)
class NetConfig:
    layers: tuple = field(default_factory=lambda: tuple(default_layers()))
    input_channels: int = 3
    init_seed: int = 0
    # images in [0, 1] are mapped to (x - input_mean) / input_std before layer 1
    input_mean: float = 0.5
    input_std: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(dict(l) for l in self.layers))
        if self.input_channels < 1:
            raise ValueError("input_channels must be >= 1")
        if self.input_std <= 0:
            raise ValueError("input_std must be positive")
        for spec in self.layers:
            if spec["type"] not in ("conv", "relu", "upsample", "gap", "linear"):
                raise ValueError(f"unknown layer type {spec['type']!r}")

    @property
    def downsample_factor(self):
        num, den = 1, 1
        for spec in self.layers:
            if spec["type"] == "conv":
                num *= spec.get("stride", 1)
            elif spec["type"] == "upsample":
                den *= spec["factor"]
        if num % den:
            raise ValueError("strides and upsample factors do not give an integer factor")
        return num // den

    @property
    def strides_product(self):
        p = 1
        for spec in self.layers:
            if spec["type"] == "conv":
                p *= spec.get("stride", 1)
        return p

    def check_label_head(self):
        """Segmentation nets must end in a 1-channel conv followed by ReLU."""
        convs = [s for s in self.layers if s["type"] == "conv"]
        if not convs or convs[-1]["out"] != 1:
            raise ValueError("the last conv layer must have one output channel")
        if self.layers[-1]["type"] != "relu":
            raise ValueError("the network must end with a ReLU")
        if self.downsample_factor < 1:
            raise ValueError("downsample factor must be >= 1")

    def to_dict(self):
        return {"layers": [dict(l) for l in self.layers], "input_channels": self.input_channels,
                "init_seed": self.init_seed, "input_mean": self.input_mean, "input_std": self.input_std}

    @classmethod
    def from_dict(cls, d):
        return cls(layers=tuple(d.get("layers", default_layers())),
                   input_channels=d.get("input_channels", 3), init_seed=d.get("init_seed", 0),
                   input_mean=d.get("input_mean", 0.5), input_std=d.get("input_std", 0.25))


class ParamSet(dict):
    """Flat ``name -> array`` parameter dict with an update counter."""

    version = 0

    def copy(self):
        out = ParamSet({k: v.copy() for k, v in self.items()})
        out.version = self.version
        return out


@dataclass
class OptState:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    buffers: dict = field(default_factory=dict)
    step: int = 0
    kind: str = "sgd"
    beta2: float = 0.999
    second: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


def init(cfg: NetConfig) -> ParamSet:
    """He-scaled normal weights drawn from ``cfg.init_seed``; zero biases."""
    rng = np.random.default_rng(cfg.init_seed)
    params = ParamSet()
    ch = cfg.input_channels
    for i, spec in enumerate(cfg.layers):
        kind = spec["type"]
        if kind == "conv":
            k = spec["kernel"]
            fan_in = ch * k * k
            params[f"{i}.w"] = rng.standard_normal((spec["out"], ch, k, k)) * np.sqrt(2.0 / fan_in)
            params[f"{i}.b"] = np.zeros(spec["out"])
            ch = spec["out"]
        elif kind == "linear":
            params[f"{i}.w"] = rng.standard_normal((spec["out"], ch)) * np.sqrt(2.0 / ch)
            params[f"{i}.b"] = np.zeros(spec["out"])
            ch = spec["out"]
    return params


@dataclass
class Tape:
    params: ParamSet
    version: int
    records: list
    out_shape: tuple


def _conv_forward(x, w, b, stride):
    c, h, wd = x.shape
    out_c, in_c, k, _ = w.shape
    if in_c != c:
        raise DimensionError(f"conv expects {in_c} input channels, got {c}")
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    out_h = (h + 2 * pad - k) // stride + 1
    out_w = (wd + 2 * pad - k) // stride + 1
    cols = kernels.im2col(xp, k, stride, out_h, out_w)
    y = w.reshape(out_c, -1) @ cols + b[:, None]
    return y.reshape(out_c, out_h, out_w), (cols, xp.shape, out_h, out_w)


def _run(params, cfg: NetConfig, x):
    records = []
    for i, spec in enumerate(cfg.layers):
        kind = spec["type"]
        if kind == "conv":
            stride = spec.get("stride", 1)
            if x.shape[1] % stride or x.shape[2] % stride:
                raise DimensionError(f"layer {i}: size {x.shape[1:]} not divisible by stride {stride}")
            x, rec = _conv_forward(x, params[f"{i}.w"], params[f"{i}.b"], stride)
        elif kind == "relu":
            rec = x > 0
            x = np.where(rec, x, 0.0)
        elif kind == "upsample":
            fct = spec["factor"]
            rec = fct
            x = np.repeat(np.repeat(x, fct, axis=1), fct, axis=2)
        elif kind == "gap":
            rec = x.shape
            x = x.mean(axis=(1, 2))
        else:  # linear
            rec = x
            x = params[f"{i}.w"] @ x + params[f"{i}.b"]
        records.append(rec)
    return x, records


def forward_raw(params: ParamSet, cfg: NetConfig, x):
    """Run the net on a ``(C, H, W)`` activation; returns ``(output, tape)``."""
    x = np.asarray(x, dtype=np.float64)
    out, records = _run(params, cfg, x)
    return out, Tape(params, params.version, records, out.shape)


def forward(params: ParamSet, cfg: NetConfig, image):
    """Predict the real label map for an ``(H, W, C)`` image.

    Returns ``(f, tape)`` with ``f`` of shape ``(H/d, W/d)``.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.shape[2] != cfg.input_channels:
        raise DimensionError(f"expected {cfg.input_channels} channels, got {image.shape[2]}")
    s = cfg.strides_product
    if image.shape[0] % s or image.shape[1] % s:
        raise DimensionError(f"image size {image.shape[:2]} not divisible by {s}")
    x = (np.transpose(image, (2, 0, 1)) - cfg.input_mean) / cfg.input_std
    out, tape = forward_raw(params, cfg, x)
    return out[0], tape


def backward(tape: Tape, cfg: NetConfig, grad_out):
    """Reverse pass; returns parameter gradients keyed like the ParamSet."""
    params = tape.params
    if params.version != tape.version:
        raise StaleTapeError("parameters changed since this tape was recorded")
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != tape.out_shape:
        if g.shape == tape.out_shape[1:] and tape.out_shape[0] == 1:
            g = g[None]
        else:
            raise DimensionError(f"gradient shape {g.shape} does not match output {tape.out_shape}")
    grads = {}
    for i in range(len(cfg.layers) - 1, -1, -1):
        spec = cfg.layers[i]
        rec = tape.records[i]
        kind = spec["type"]
        if kind == "conv":
            cols, xp_shape, out_h, out_w = rec
            w = params[f"{i}.w"]
            out_c, in_c, k, _ = w.shape
            gm = g.reshape(out_c, out_h * out_w)
            grads[f"{i}.w"] = (gm @ cols.T).reshape(w.shape)
            grads[f"{i}.b"] = gm.sum(axis=1)
            if i > 0:
                dcols = w.reshape(out_c, -1).T @ gm
                stride = spec.get("stride", 1)
                gp = kernels.col2im(dcols, in_c, xp_shape[1], xp_shape[2], k, stride, out_h, out_w)
                pad = k // 2
                g = gp[:, pad:xp_shape[1] - pad, pad:xp_shape[2] - pad]
        elif kind == "relu":
            g = np.where(rec, g, 0.0)
        elif kind == "upsample":
            fct = rec
            c, h, w_ = g.shape
            g = g.reshape(c, h // fct, fct, w_ // fct, fct).sum(axis=(2, 4))
        elif kind == "gap":
            c, h, w_ = rec
            g = np.broadcast_to((g / (h * w_))[:, None, None], rec).copy()
        else:
            x = rec
            grads[f"{i}.w"] = np.outer(g, x)
            grads[f"{i}.b"] = g.copy()
            g = params[f"{i}.w"].T @ g
    return grads


def _check_grads(params, grads, opt):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name!r} at step {opt.step}")
        if g.shape != params[name].shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, expected {params[name].shape}")


def step(params: ParamSet, grads, opt: OptState):
    """Apply one update with the optimizer named by ``opt.kind``."""
    if opt.kind == "adam":
        return adam_step(params, grads, opt)
    return sgd_step(params, grads, opt)


def adam_step(params: ParamSet, grads, opt: OptState, eps=1e-8):
    """Adam with decoupled weight decay; ``opt.momentum`` plays beta1."""
    _check_grads(params, grads, opt)
    t = opt.step + 1
    b1, b2 = opt.momentum, opt.beta2
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = b1 * opt.buffers.get(name, 0.0) + (1 - b1) * g
        v = b2 * opt.second.get(name, 0.0) + (1 - b2) * g * g
        opt.buffers[name] = m
        opt.second[name] = v
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        if opt.weight_decay:
            p *= 1 - opt.lr * opt.weight_decay
        p -= opt.lr * mhat / (np.sqrt(vhat) + eps)
    params.version += 1
    opt.step = t
    return params, opt


def sgd_step(params: ParamSet, grads, opt: OptState):
    """Classical momentum SGD with L2 weight decay, in place.

    ``buf <- momentum * buf + (g + weight_decay * p)``; ``p <- p - lr * buf``.
    """
    _check_grads(params, grads, opt)
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        step = g + opt.weight_decay * p if opt.weight_decay else g
        buf = opt.buffers.get(name)
        if buf is None:
            buf = np.zeros_like(p)
        buf = opt.momentum * buf + step
        opt.buffers[name] = buf
        p -= opt.lr * buf
    params.version += 1
    opt.step += 1
    return params, opt
